#include <doctest.h>

#include <fstream>
#include <map>

#include "oracles.hpp"
#include "phonemask/audio.hpp"
#include "phonemask/errors.hpp"
#include "phonemask/fixture.hpp"
#include "phonemask/inventory.hpp"

using namespace phonemask;
using namespace phonemask::inventory;

namespace {

void write_manifest(const std::filesystem::path& path, const std::string& body) {
  std::ofstream(path) << body;
}

Waveform ramp(std::size_t n, double rate) {
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = 0.5 * std::sin(0.01 * i);
  return w;
}

}  // namespace

TEST_CASE("classification table") {
  CHECK(classify_phoneme("AA") == PhonemeClass::Vowel);
  CHECK(classify_phoneme("AH0") == PhonemeClass::Vowel);
  CHECK(classify_phoneme("ER1") == PhonemeClass::Vowel);
  CHECK(classify_phoneme("S") == PhonemeClass::Consonant);
  CHECK(classify_phoneme("NG") == PhonemeClass::Consonant);
  CHECK_THROWS_AS(classify_phoneme("QQ"), ClassificationError);
  CHECK_THROWS_AS(classify_phoneme(""), ClassificationError);
  for (const auto& v : fixture::vowel_labels()) CHECK(classify_phoneme(v) == PhonemeClass::Vowel);
  for (const auto& c : fixture::consonant_labels()) CHECK(classify_phoneme(c) == PhonemeClass::Consonant);
}

TEST_CASE("custom classifier table from file") {
  oracle::TempDir dir("classifier");
  std::ofstream(dir / "table.csv") << "# label,class\na,vowel\nk,consonant\n";
  const auto c = PhonemeClassifier::from_file(dir / "table.csv");
  CHECK(c.classify("a") == PhonemeClass::Vowel);
  CHECK(c.classify("k") == PhonemeClass::Consonant);
  CHECK_THROWS_AS(c.classify("AA"), ClassificationError);
}

TEST_CASE("single entry manifest") {
  oracle::TempDir dir("manifest1");
  write_wav(dir / "a.wav", ramp(48000, 48000));
  write_manifest(dir / "m.csv", "a.wav,AA,0.20,0.30,spk\n");
  const auto inv = load_manifest(dir / "m.csv");
  REQUIRE(inv.size() == 1);
  CHECK(inv.clip(0).phoneme_class == PhonemeClass::Vowel);
  CHECK(inv.clip(0).duration_s() == doctest::Approx(0.10).epsilon(1.0 / 4800));
  CHECK(inv.clip(0).samples.size() == 4800);
}

TEST_CASE("clip durations survive resampling within one sample") {
  oracle::TempDir dir("manifest_rs");
  write_wav(dir / "a.wav", ramp(16000, 16000));
  write_manifest(dir / "m.csv", "a.wav,IY,0.1,0.237,s\na.wav,S,0.5,0.61,s\n");
  const auto inv = load_manifest(dir / "m.csv");
  REQUIRE(inv.size() == 2);
  CHECK(std::abs(inv.clip(0).duration_s() - 0.137) <= 1.0 / 48000 + 1e-12);
  CHECK(std::abs(inv.clip(1).duration_s() - 0.11) <= 1.0 / 48000 + 1e-12);
  CHECK(inv.sample_rate() == 48000);
}

TEST_CASE("end before start is a parse error at that line") {
  oracle::TempDir dir("manifest_bad");
  write_wav(dir / "a.wav", ramp(48000, 48000));
  write_manifest(dir / "m.csv", "# header\na.wav,AA,0.1,0.2,s\na.wav,AA,0.3,0.3,s\n");
  try {
    load_manifest(dir / "m.csv");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(parse_manifest_line("a.wav,AA,0.1", 1), ParseError);
  CHECK_THROWS_AS(parse_manifest_line("a.wav,AA,x,0.2,s", 1), ParseError);
}

TEST_CASE("short segments are skipped and counted") {
  oracle::TempDir dir("manifest_short");
  write_wav(dir / "a.wav", ramp(48000, 48000));
  write_manifest(dir / "m.csv", "a.wav,AA,0.1,0.105,s\na.wav,AA,0.2,0.3,s\n");
  LoadReport report;
  const auto inv = load_manifest(dir / "m.csv", PhonemeClassifier::standard(), &report);
  CHECK(inv.size() == 1);
  CHECK(report.skipped_short == 1);
  CHECK(report.entries == 2);
}

TEST_CASE("per speaker counts match the manifest") {
  oracle::TempDir dir("corpus");
  fixture::FixtureOptions opts;
  opts.speakers = 2;
  const auto paths = fixture::write_corpus(dir.path(), opts);
  std::map<std::pair<std::string, PhonemeClass>, std::size_t> expected;
  std::ifstream in(paths.manifest);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto e = parse_manifest_line(line, 0);
    ++expected[{e.speaker_id, classify_phoneme(e.phoneme_label)}];
  }
  const auto inv = load_manifest(paths.manifest);
  CHECK(inv.speakers().size() == 2);
  for (const auto& [key, n] : expected) CHECK(inv.count(key.first, key.second) == n);
  CHECK(inv.ready_for_synthesis());
}

TEST_CASE("ingest is idempotent") {
  oracle::TempDir dir("idem");
  fixture::FixtureOptions opts;
  opts.speakers = 2;
  const auto paths = fixture::write_corpus(dir.path(), opts);
  const auto a = load_manifest(paths.manifest);
  const auto b = load_manifest(paths.manifest);
  CHECK(a.size() == b.size());
  CHECK(a.digest() == b.digest());
}

TEST_CASE("missing audio is an ingest error") {
  oracle::TempDir dir("missing");
  write_manifest(dir / "m.csv", "nowhere.wav,AA,0.1,0.2,s\n");
  CHECK_THROWS_AS(load_manifest(dir / "m.csv"), IngestError);
}
