#include <doctest.h>

#include <functional>

#include "oracles.hpp"
#include "phonemask/augment.hpp"
#include "phonemask/digest.hpp"
#include "phonemask/errors.hpp"

using namespace phonemask;
using namespace phonemask::augment;

namespace {

constexpr double kRate = 48000.0;

PhonemeClip make_clip(std::vector<double> s) {
  PhonemeClip c;
  c.samples = std::move(s);
  c.label = "AA";
  c.speaker_id = "t";
  c.sample_rate = kRate;
  return c;
}

std::vector<double> sawtooth(double seconds, const std::function<double(double)>& f0) {
  return oracle::sawtooth(seconds, kRate, f0);
}

double oracle_f0(std::span<const double> x, std::size_t centre) { return oracle::f0_at(x, kRate, centre); }

double oracle_mean_f0(std::span<const double> x) { return oracle::mean_f0(x, kRate); }

}  // namespace

TEST_CASE("speed change duration") {
  const auto clip = make_clip(sawtooth(0.30, [](double) { return 150.0; }));
  CHECK(change_speed(clip, 1.0).samples.size() == clip.samples.size());
  const auto fast = change_speed(clip, 1.5);
  CHECK(fast.duration_s() == doctest::Approx(0.20).epsilon(0.02));
  const auto slow = change_speed(clip, 0.5);
  CHECK(slow.duration_s() == doctest::Approx(0.60).epsilon(0.02));
  CHECK_THROWS_AS(change_speed(make_clip(std::vector<double>(9600, 0.1)), 2.0), ContractError);
  CHECK_THROWS_AS(change_speed(clip, 0.2), ContractError);
}

TEST_CASE("speed change preserves pitch") {
  const auto clip = make_clip(sawtooth(0.4, [](double) { return 160.0; }));
  const auto fast = change_speed(clip, 1.4);
  CHECK(oracle_f0(fast.samples, fast.samples.size() / 2) == doctest::Approx(160.0).epsilon(0.05));
}

TEST_CASE("F0 mean shift") {
  const auto clip = make_clip(sawtooth(0.4, [](double) { return 200.0; }));
  const auto same = shift_f0_mean(clip, 1.0);
  CHECK_FALSE(same.noop);
  CHECK(oracle_mean_f0(same.clip.samples) == doctest::Approx(oracle_mean_f0(clip.samples)).epsilon(0.02));
  const auto up = shift_f0_mean(clip, 1.1);
  CHECK(oracle_mean_f0(up.clip.samples) == doctest::Approx(220.0).epsilon(0.10));
  CHECK(up.clip.samples.size() == clip.samples.size());
  CHECK_THROWS_AS(shift_f0_mean(clip, 1.2), ContractError);
}

TEST_CASE("unvoiced clips pass through pitch edits") {
  const auto noise = make_clip(oracle::white(9600, 3, 0.1));
  const auto a = shift_f0_mean(noise, 1.1);
  CHECK(a.noop);
  CHECK(a.clip.samples == noise.samples);
  const auto b = warp_f0_contour(noise, 0.8);
  CHECK(b.noop);
  CHECK(b.clip.samples == noise.samples);
}

TEST_CASE("F0 contour warp") {
  const auto flat = make_clip(sawtooth(0.4, [](double) { return 180.0; }));
  const auto w = warp_f0_contour(flat, 0.7);
  CHECK(oracle_mean_f0(w.clip.samples) == doctest::Approx(180.0).epsilon(0.02));
  const auto id = warp_f0_contour(flat, 1.0);
  CHECK(oracle_mean_f0(id.clip.samples) == doctest::Approx(180.0).epsilon(0.02));

  const double dur = 0.5;
  const auto glide = make_clip(sawtooth(dur, [&](double t) { return 180.0 + 40.0 * t / dur; }));
  const auto warped = warp_f0_contour(glide, 0.7);
  const double mean_in = oracle_mean_f0(glide.samples);
  for (std::size_t c : {std::size_t(3600), glide.samples.size() - 3600}) {
    const double f_in = oracle_f0(glide.samples, c);
    const double expected = 0.7 * (f_in - mean_in) + mean_in;
    CHECK(oracle_f0(warped.clip.samples, c) == doctest::Approx(expected).epsilon(0.10));
  }
  // Endpoints of the 180 to 220 Hz glide map to about 186 and 214 Hz.
  CHECK(oracle_f0(warped.clip.samples, 3600) < oracle_f0(glide.samples, 3600) + 10.0);
  CHECK(oracle_f0(warped.clip.samples, 3600) > oracle_f0(glide.samples, 3600));
}

TEST_CASE("energy scaling") {
  const auto clip = make_clip(oracle::white(4800, 9, 0.1));
  CHECK(scale_energy(clip, 1.0).samples == clip.samples);
  for (double a : {2.0, 0.5, 1.37}) {
    const auto s = scale_energy(clip, a);
    CHECK(oracle::rms(s.samples) / oracle::rms(clip.samples) == doctest::Approx(a).epsilon(1e-12));
  }
  CHECK_THROWS_AS(scale_energy(clip, 3.0), ContractError);
}

TEST_CASE("reversal") {
  const auto clip = make_clip(oracle::white(4801, 11, 0.1));
  const auto r = reverse(clip);
  CHECK(reverse(r).samples == clip.samples);
  CHECK(oracle::rms(r.samples) == doctest::Approx(oracle::rms(clip.samples)).epsilon(1e-14));
  for (double f : {100.0, 1234.5, 7000.0, 20000.0}) {
    const double a = std::abs(oracle::dft_bin(clip.samples, f, kRate));
    const double b = std::abs(oracle::dft_bin(r.samples, f, kRate));
    CHECK(std::abs(a - b) <= 1e-6 * a);
  }
}

TEST_CASE("augment with p = 0 is the identity") {
  const auto clip = make_clip(sawtooth(0.2, [](double) { return 150.0; }));
  AugmentConfig cfg;
  cfg.apply_probability = 0.0;
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto r = augment::augment(clip, cfg, rng);
    CHECK(r.clip.samples == clip.samples);
    for (bool f : r.fired) CHECK_FALSE(f);
  }
}

TEST_CASE("augment with p = 1 is reproducible") {
  const auto clip = make_clip(sawtooth(0.2, [](double) { return 150.0; }));
  AugmentConfig cfg;
  cfg.apply_probability = 1.0;
  Rng a(77), b(77);
  const auto ra = augment::augment(clip, cfg, a);
  const auto rb = augment::augment(clip, cfg, b);
  CHECK(sha256_hex(ra.clip.samples) == sha256_hex(rb.clip.samples));
  for (bool f : ra.fired) CHECK(f);
}

TEST_CASE("augment firing counts at p = 0.5") {
  // Short unvoiced clip keeps 10,000 trials cheap; firing is independent of content.
  const auto clip = make_clip(oracle::white(480, 5, 0.05));
  AugmentConfig cfg;
  cfg.apply_probability = 0.5;
  Rng rng(2024);
  std::array<int, kTransformCount> fired{};
  for (int i = 0; i < 10000; ++i) {
    const auto r = augment::augment(clip, cfg, rng);
    for (std::size_t t = 0; t < kTransformCount; ++t) fired[t] += r.fired[t];
    CHECK(r.clip.sample_rate == kRate);
  }
  for (std::size_t t = 0; t < kTransformCount; ++t) {
    INFO(to_string(static_cast<Transform>(t)));
    CHECK(std::abs(fired[t] - 5000) <= 150);
  }
}

TEST_CASE("config bounds") {
  AugmentConfig cfg;
  cfg.validate();
  cfg.speed_range = {0.2, 1.0};
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = {};
  cfg.apply_probability = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}
