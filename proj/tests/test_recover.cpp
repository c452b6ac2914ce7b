#include <doctest.h>

#include <json.hpp>

#include "oracles.hpp"
#include "phonemask/channel.hpp"
#include "phonemask/errors.hpp"
#include "phonemask/fixture.hpp"
#include "phonemask/recover.hpp"
#include "phonemask/synth.hpp"

using namespace phonemask;
using namespace phonemask::recover;

namespace {

constexpr double kBb = 48000.0;

struct Scene {
  inventory::PhonemeInventory inv = fixture::make_inventory();
  voiceprint::SpeakerProfile profile;
  Waveform speech;

  Scene() {
    profile.matched_speaker_id = "spk1";
    fixture::FixtureOptions o;
    speech = fixture::clean_speech(o, 1);
  }

  Waveform noise(std::uint64_t seed, double seconds = 10.0) const {
    synth::SynthConfig cfg;
    cfg.seed = seed;
    cfg.duration_s = seconds;
    return synth::synthesize_noise(inv, profile, cfg, "2026-01-01T00:00:00Z").waveform;
  }

  Waveform reference(std::uint64_t seed) const {
    return make_reference(noise(seed), ReferenceMode::Demodulated, txchain::ModulationOptions{},
                          channel::NonlinearityModel{});
  }
};

const Scene& scene() {
  static const Scene s;
  return s;
}

std::vector<double> shifted(std::span<const double> x, std::size_t length, std::int64_t lag) {
  std::vector<double> y(length, 0.0);
  for (std::size_t t = 0; t < length; ++t) {
    const auto u = static_cast<std::int64_t>(t) - lag;
    if (u >= 0 && u < static_cast<std::int64_t>(x.size())) y[t] = x[u];
  }
  return y;
}

// Gram-Schmidt: a vector orthogonal to `ref` with the same norm.
std::vector<double> orthogonal_to(std::span<const double> ref, std::uint64_t seed) {
  auto w = oracle::white(ref.size(), seed);
  double d = 0, rr = 0;
  for (std::size_t i = 0; i < w.size(); ++i) d += w[i] * ref[i], rr += ref[i] * ref[i];
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= d / rr * ref[i];
  const double scale = std::sqrt(rr / oracle::sum_sq(w));
  for (auto& v : w) v *= scale;
  return w;
}

}  // namespace

TEST_CASE("si_snr properties") {
  const auto s = oracle::band_noise(48000, kBb, 100, 4000, 1, 50);
  CHECK(si_snr(s, s) >= 60.0);
  std::vector<double> twice(s), neg_scale(s);
  for (auto& v : twice) v *= 2.0;
  CHECK(si_snr(twice, s) == doctest::Approx(si_snr(s, s)));

  const auto w = orthogonal_to(s, 9);
  std::vector<double> est(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) est[i] = s[i] + w[i];
  CHECK(std::abs(si_snr(est, s)) <= 1e-3);

  std::vector<double> noisy(s), noisy_scaled(s), ref_scaled(s);
  const auto e = oracle::white(s.size(), 3, 0.3);
  for (std::size_t i = 0; i < s.size(); ++i) {
    noisy[i] = s[i] + e[i];
    noisy_scaled[i] = 3.7 * noisy[i];
    ref_scaled[i] = 0.2 * s[i];
  }
  CHECK(std::abs(si_snr(noisy_scaled, s) - si_snr(noisy, s)) <= 1e-3);
  CHECK(std::abs(si_snr(noisy_scaled, ref_scaled) - si_snr(noisy, s)) <= 1e-3);

  CHECK_THROWS_AS(si_snr(s, std::vector<double>(s.size(), 0.0)), ContractError);
  CHECK_THROWS_AS(si_snr(s, std::vector<double>(10, 1.0)), ContractError);
  const Waveform brief{std::vector<double>(s.begin(), s.begin() + 24000), kBb};
  CHECK_THROWS_AS(si_snr(brief, brief), ContractError);
}

TEST_CASE("planted lags are found exactly") {
  const auto& sc = scene();
  const auto ref = sc.reference(5);
  RecoveryConfig cfg;
  for (std::int64_t lag : {std::int64_t(12345), std::int64_t(0), std::int64_t(-777), std::int64_t(48000),
                           std::int64_t(-48000), std::int64_t(31)}) {
    const auto rec = shifted(ref.samples, static_cast<std::size_t>(8 * kBb), lag);
    const auto a = align(rec, ref.samples, cfg);
    CHECK(a.lag == lag);
    INFO(lag);
    CHECK(a.peak == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("alignment agrees with an exhaustive scan") {
  const auto x = oracle::band_noise(24000, kBb, 100, 4000, 21, 60);
  auto rec = shifted(x, 24000, 173);
  const auto e = oracle::white(rec.size(), 2, 0.5);
  for (std::size_t t = 0; t < rec.size(); ++t) rec[t] += e[t];
  RecoveryConfig cfg;
  cfg.max_shift = 400;
  long best = 0;
  double best_v = -2;
  for (long k = -400; k <= 400; ++k) {
    const double v = ncc_at(rec, x, k);
    if (v > best_v + 1e-12) best_v = v, best = k;
  }
  CHECK(best == 173);
  CHECK(align(rec, x, cfg).lag == best);
}

TEST_CASE("uncorrelated reference fails alignment") {
  const auto& sc = scene();
  const auto a = sc.reference(5), b = sc.reference(6);
  CHECK_THROWS_AS(align(a.samples, b.samples, RecoveryConfig{}), AlignmentError);
  const auto w = oracle::white(480000, 4);
  CHECK_THROWS_AS(align(w, a.samples, RecoveryConfig{}), AlignmentError);
}

TEST_CASE("single planted tap") {
  const auto& sc = scene();
  const auto ref = sc.reference(7);
  const std::size_t n = sc.speech.size();
  auto rec = shifted(ref.samples, n, 10);
  const double g = oracle::rms(sc.speech.samples) / (0.5 * oracle::rms(rec));
  for (std::size_t t = 0; t < n; ++t) rec[t] = 0.5 * rec[t] + sc.speech.samples[t] / g;
  const auto aligned = aligned_reference(ref.samples, n, 0);
  RecoveryConfig cfg;
  cfg.filter_taps = 512;
  const auto est = estimate_channel(rec, aligned, cfg);
  const auto it = std::max_element(est.taps.begin(), est.taps.end(),
                                   [](double a, double b) { return std::abs(a) < std::abs(b); });
  CHECK(it - est.taps.begin() == 10);
  CHECK(*it == doctest::Approx(0.5).epsilon(0.10));
}

TEST_CASE("perfectly cancelable and reverberant channels") {
  const auto& sc = scene();
  const auto ref = sc.reference(8);
  RecoveryConfig cfg;
  const auto same = estimate_channel(ref.samples, ref.samples, cfg);
  CHECK(same.converged);
  CHECK(same.residual_db <= -40.0);

  Rng rng(31);
  const auto h = channel::synthetic_cir(channel::CirOptions{}, rng);
  auto rec = oracle::direct_convolve(ref.samples, h.samples);
  rec.resize(ref.size());
  const auto est = estimate_channel(rec, ref.samples, cfg);
  CHECK(est.residual_db <= -10.0);
}

TEST_CASE("cancellation on a planted mixture") {
  const auto& sc = scene();
  const auto ref = sc.reference(11);
  Rng rng(12);
  const auto h = channel::synthetic_cir(channel::CirOptions{}, rng);
  auto room = channel::apply_cir(ref, h);
  room.samples.resize(ref.size());
  channel::MixOptions mo;
  mo.snr_db = -5.0;
  mo.shift_samples = -23456;
  const auto rec = channel::mix_at_snr(sc.speech, room, mo);
  const auto res = cancel(rec.samples, ref, RecoveryConfig{});
  CHECK(res.aligned);
  CHECK(res.flag.empty());
  // The reverberant peak may sit a few samples off the planted shift; the filter lead absorbs it.
  CHECK(std::llabs(res.lag + 23456) <= 8);
  const double before = si_snr(rec.samples, sc.speech);
  const double after = si_snr(res.recovered, sc.speech);
  CHECK(after - before >= 10.0);
}

TEST_CASE("clean recordings are left nearly intact") {
  const auto& sc = scene();
  const auto ref = sc.reference(13);
  // The reference is present but at a negligible level, so alignment succeeds.
  channel::MixOptions mo;
  mo.snr_db = 60.0;
  const auto rec = channel::mix_at_snr(sc.speech, ref, mo);
  const auto res = cancel(rec.samples, ref, RecoveryConfig{});
  CHECK(si_snr(rec.samples, sc.speech) - si_snr(res.recovered, sc.speech) <= 1.0);

  // No reference content at all: alignment fails and the recording passes through.
  const auto none = cancel(sc.speech, ref, RecoveryConfig{});
  CHECK(si_snr(sc.speech, sc.speech) - si_snr(none.recovered, sc.speech) <= 1.0);
}

TEST_CASE("wrong reference is flagged and passed through") {
  const auto& sc = scene();
  const auto ref = sc.reference(14), wrong = sc.reference(15);
  channel::MixOptions mo;
  mo.snr_db = -5.0;
  const auto rec = channel::mix_at_snr(sc.speech, ref, mo);
  const auto res = cancel(rec.samples, wrong, RecoveryConfig{});
  CHECK_FALSE(res.aligned);
  CHECK(res.flag == "alignment_failed");
  CHECK(res.recovered.samples == rec.samples.samples);
}

TEST_CASE("divergent step sizes are reported") {
  RecoveryConfig cfg;
  cfg.mu = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg.mu = 2.0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = {};
  cfg.filter_taps = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("reference modes and report line") {
  const auto& sc = scene();
  const auto noise = sc.noise(3, 2.0);
  const auto raw = make_reference(noise, ReferenceMode::Raw, {}, {});
  CHECK(raw.samples == noise.samples);
  const auto demod = make_reference(noise, ReferenceMode::Demodulated, {}, {});
  CHECK(demod.size() == noise.size());
  CHECK(std::abs(oracle::correlation_at(demod.samples, noise.samples, 0)) > 0.9);
  CHECK(parse_reference_mode("raw") == ReferenceMode::Raw);
  CHECK_THROWS_AS(parse_reference_mode("other"), ConfigError);

  RecoveryReport r;
  r.lag = -5;
  r.aligned = true;
  r.si_snr_before = -5.0;
  r.si_snr_after = 12.5;
  const auto j = nlohmann::json::parse(r.to_json_line());
  CHECK(j.at("lag") == -5);
  CHECK(j.at("si_snr_after") == 12.5);
  CHECK(j.contains("converged"));
  CHECK(r.to_json_line().find('\n') == std::string::npos);
}
