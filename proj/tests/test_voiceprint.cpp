#include <doctest.h>

#include "oracles.hpp"
#include "phonemask/errors.hpp"
#include "phonemask/fixture.hpp"
#include "phonemask/voiceprint.hpp"

using namespace phonemask;
using namespace phonemask::voiceprint;

namespace {

struct Corpus {
  fixture::FixtureOptions opts;
  inventory::PhonemeInventory inv;
  Gallery gallery;
  Corpus() : inv(fixture::make_inventory(opts)), gallery(build_gallery(inv, SpectralEmbedder{})) {}
};

const Corpus& corpus() {
  static const Corpus c;
  return c;
}

// Exhaustive scan with the tie-break rule.
std::string argmax_speaker(const std::vector<double>& e, const Gallery& g) {
  std::string best;
  double best_c = -2.0;
  for (const auto& [id, vp] : g) {
    double d = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < e.size(); ++i) d += e[i] * vp.embedding[i], na += e[i] * e[i],
                                                  nb += vp.embedding[i] * vp.embedding[i];
    const double c = d / std::sqrt(na * nb);
    if (c > best_c + 1e-15) best_c = c, best = id;
  }
  return best;
}

Waveform speech_of(std::size_t speaker, double seconds, std::uint64_t seed) {
  Rng rng(seed);
  return fixture::render_utterance(fixture::default_voices()[speaker], seconds, rng);
}

}  // namespace

TEST_CASE("cosine identities") {
  const std::vector<double> e{0.6, 0.8, 0.0};
  const std::vector<double> neg{-0.6, -0.8, 0.0};
  const std::vector<double> perp{0.8, -0.6, 0.0};
  CHECK(cosine(e, e) == doctest::Approx(1.0));
  CHECK(cosine(e, neg) == doctest::Approx(-1.0));
  CHECK(std::abs(cosine(e, perp)) < 1e-15);
  const std::vector<double> scaled{6.0, 8.0, 0.0};
  CHECK(cosine(scaled, perp) == doctest::Approx(cosine(e, perp)));
  CHECK(cosine(scaled, e) == doctest::Approx(1.0));
  CHECK_THROWS_AS(cosine(e, std::vector<double>{1.0, 0.0}), ContractError);
  CHECK(distance(Voiceprint{e, 1}, Voiceprint{perp, 1}) == doctest::Approx(1.0));
}

TEST_CASE("embedding contracts") {
  const auto w = speech_of(0, 3.0, 1);
  const auto a = embed(w), b = embed(w);
  CHECK(a.embedding == b.embedding);
  CHECK(cosine(a, b) == doctest::Approx(1.0));
  CHECK(a.dimension() == SpectralEmbedder::kDimension);
  CHECK(std::sqrt(oracle::sum_sq(a.embedding)) == doctest::Approx(1.0));

  Waveform half = w;
  half.samples.resize(24000);
  CHECK_THROWS_AS(embed(half), ContractError);
  Waveform silent;
  silent.samples.assign(96000, 0.0);
  CHECK_THROWS_AS(embed(silent), ExtractionError);
}

TEST_CASE("same speaker scores above other speakers on held-out speech") {
  const auto& c = corpus();
  for (std::size_t s = 0; s < c.opts.speakers; ++s) {
    const auto probe = embed(speech_of(s, 6.0, 900 + s));
    const auto own = cosine(probe, c.gallery.at(fixture::default_voices()[s].id));
    for (std::size_t o = 0; o < c.opts.speakers; ++o) {
      if (o == s) continue;
      CHECK(cosine(probe, c.gallery.at(fixture::default_voices()[o].id)) < own);
    }
  }
}

TEST_CASE("register_single matches the exhaustive argmax") {
  const auto& c = corpus();
  const SpectralEmbedder emb;
  for (std::size_t s = 0; s < c.opts.speakers; ++s) {
    const auto audio = speech_of(s, 6.0, 50 + s);
    const auto profile = register_single({audio}, c.gallery, emb);
    CHECK(profile.matched_speaker_id == argmax_speaker(emb.embed(audio).embedding, c.gallery));
    CHECK(profile.warnings.empty());
  }
}

TEST_CASE("dataset speaker's own audio matches with cosine one") {
  const auto& c = corpus();
  const auto id = c.inv.speakers()[1];
  const auto profile = register_single({c.inv.speaker_audio(id)}, c.gallery, SpectralEmbedder{});
  CHECK(profile.matched_speaker_id == id);
  CHECK(profile.matched_cosine == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("short registration warns") {
  const auto& c = corpus();
  const auto profile = register_single({speech_of(2, 3.0, 5)}, c.gallery, SpectralEmbedder{});
  CHECK_FALSE(profile.matched_speaker_id.empty());
  REQUIRE(profile.warnings.size() == 1);
  CHECK(profile.warnings[0].find("3.00 s") != std::string::npos);
}

TEST_CASE("group registration") {
  const auto& c = corpus();
  const SpectralEmbedder emb;
  const auto a = speech_of(1, 6.0, 71);
  const auto single = register_single({a}, c.gallery, emb);
  const auto twin = register_group({{a}, {a}}, c.gallery, emb);
  CHECK(twin.matched_speaker_id == single.matched_speaker_id);
  CHECK(twin.member_count == 2);

  std::vector<Waveform> users{speech_of(0, 6.0, 81), speech_of(2, 6.0, 82), speech_of(3, 6.0, 83)};
  std::vector<double> mean(SpectralEmbedder::kDimension, 0.0);
  for (const auto& u : users) {
    const auto e = emb.embed(u).embedding;
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += e[i] / 3.0;
  }
  const auto group = register_group({{users[0]}, {users[1]}, {users[2]}}, c.gallery, emb);
  CHECK(group.matched_speaker_id == argmax_speaker(mean, c.gallery));
  CHECK(group.member_count == 3);
}

TEST_CASE("antipodal group is rejected") {
  Gallery g{{"x", Voiceprint{{1.0, 0.0}, 1.0}}};
  const Voiceprint e{{0.6, 0.8}, 1.0}, ne{{-0.6, -0.8}, 1.0};
  CHECK_THROWS_AS(register_group(std::vector<Voiceprint>{e, ne}, g), RegistrationError);
}

TEST_CASE("mean of identical embeddings is exact") {
  const auto e = embed(speech_of(0, 2.0, 3));
  Gallery g{{"a", e}};
  const auto p = register_group(std::vector<Voiceprint>{e, e, e, e, e, e, e}, g);
  CHECK(p.matched_cosine == 1.0);
}

TEST_CASE("argmax tie goes to the smallest id and ignores gallery order") {
  const Voiceprint v{{1.0, 0.0}, 1.0};
  Gallery g{{"b", v}, {"a", v}, {"c", Voiceprint{{0.0, 1.0}, 1.0}}};
  CHECK(match(v, g).matched_speaker_id == "a");
}

TEST_CASE("sidecar round trip") {
  oracle::TempDir dir("sidecar");
  const auto& c = corpus();
  save_sidecar(dir / "g.csv", c.gallery);
  const auto back = load_sidecar(dir / "g.csv");
  REQUIRE(back.size() == c.gallery.size());
  for (const auto& [id, vp] : c.gallery) CHECK(back.at(id).embedding == vp.embedding);
}
