#include <algorithm>
#include <chrono>
#include <fmt/core.h>
#include <functional>
#include <limits>
#include <string>

#include "oracles.hpp"
#include "phonemask/augment.hpp"
#include "phonemask/channel.hpp"
#include "phonemask/config.hpp"
#include "phonemask/dsp.hpp"
#include "phonemask/errors.hpp"
#include "phonemask/fixture.hpp"
#include "phonemask/pipeline.hpp"
#include "phonemask/recover.hpp"
#include "phonemask/synth.hpp"
#include "phonemask/txchain.hpp"

using namespace phonemask;

namespace {

constexpr double kUs = kUltrasonicRate;
constexpr double kBb = kBasebandRate;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, fmt::format("exception: {}", e.what())};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = limit_s <= 0.0 || secs <= limit_s;
  const bool ok = o.pass && in_time;
  if (!ok) ++failures;
  const std::string limit = limit_s > 0.0 ? fmt::format(" (limit {:.0f} s)", limit_s) : "";
  fmt::print("{} {:>2}. {}: {} [{:.2f} s{}{}]\n", ok ? "PASS" : "FAIL", id, name, o.detail, secs, limit,
             in_time ? "" : " too slow");
  std::fflush(stdout);
}

// Shared phoneme noises for the energy and leakage criteria.
const inventory::PhonemeInventory& inventory_fixture() {
  static const auto inv = fixture::make_inventory();
  return inv;
}

voiceprint::SpeakerProfile profile_for(const std::string& id) {
  voiceprint::SpeakerProfile p;
  p.matched_speaker_id = id;
  return p;
}

Waveform phoneme_noise(std::uint64_t seed, double seconds, const std::string& speaker = "spk0") {
  synth::SynthConfig cfg;
  cfg.seed = seed;
  cfg.duration_s = seconds;
  return synth::synthesize_noise(inventory_fixture(), profile_for(speaker), cfg, "2026-01-01T00:00:00Z")
      .waveform;
}

// Line amplitudes on a 500 Hz grid from one FFT of a 0.1 s block (10 Hz bins).
std::vector<double> line_amplitudes(std::span<const double> x) {
  const auto spec = dsp::fft(x.size()).forward(x);
  std::vector<double> out;
  const std::size_t stride = static_cast<std::size_t>(500.0 * x.size() / kUs);
  for (std::size_t k = 0; k < spec.size(); k += stride) out.push_back(2.0 * std::abs(spec[k]) / x.size());
  return out;
}

Outcome modulation_identities() {
  const std::size_t n = 19200;
  const Waveform tone{txchain::cosine_tone(n, 1000.0, kUs), kUs};
  const auto lsb = line_amplitudes(txchain::modulate(tone, 40000, txchain::Scheme::LSB).sideband.samples);
  const auto usb = line_amplitudes(txchain::modulate(tone, 40000, txchain::Scheme::USB).sideband.samples);
  const auto dsb = line_amplitudes(txchain::modulate(tone, 40000, txchain::Scheme::DSB).sideband.samples);
  const std::size_t i39 = 39000 / 500, i41 = 41000 / 500;
  double worst_err = 0.0, worst_spur = 0.0;
  auto check = [&](const std::vector<double>& lines, std::vector<std::pair<std::size_t, double>> expected) {
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const auto it = std::find_if(expected.begin(), expected.end(), [&](auto& e) { return e.first == i; });
      if (it != expected.end())
        worst_err = std::max(worst_err, std::abs(lines[i] - it->second) / it->second);
      else
        worst_spur = std::max(worst_spur, lines[i]);
    }
  };
  const double half = std::sqrt(0.5);
  check(lsb, {{i39, 1.0}});
  check(usb, {{i41, 1.0}});
  check(dsb, {{i39, half}, {i41, half}});
  const double spur_db = oracle::db20(std::max(worst_spur, 1e-300));
  return {worst_err <= 1e-4 && spur_db <= -40.0,
          fmt::format("worst line error {:.2e} (tol 1e-4), worst other line {:.1f} dB (tol -40 dB)", worst_err,
                      spur_db)};
}

Outcome energy_parity() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto x = txchain::to_ultrasonic(phoneme_noise(seed, 3.0));
    const auto lsb = txchain::modulate(x, 40000, txchain::Scheme::LSB).sideband.samples;
    const auto dsb = txchain::modulate(x, 40000, txchain::Scheme::DSB).sideband.samples;
    worst = std::max(worst, std::abs(oracle::sum_sq(lsb) / oracle::sum_sq(dsb) - 1.0));
  }
  return {worst <= 0.01, fmt::format("max |E_LSB/E_DSB - 1| = {:.4f} over 10 noises (tol 0.01)", worst)};
}

Outcome self_demodulation() {
  double lo = 1e9, hi = -1e9, sum = 0.0;
  const int count = 10;
  for (int seed = 1; seed <= count; ++seed) {
    const auto x = txchain::to_ultrasonic(phoneme_noise(static_cast<std::uint64_t>(seed), 3.0));
    const auto dsb = channel::self_demod_leakage(txchain::modulate(x, 40000, txchain::Scheme::DSB), 0.1);
    const auto lsb = channel::self_demod_leakage(txchain::modulate(x, 40000, txchain::Scheme::LSB), 0.1);
    const double r = lsb.audible_power / dsb.audible_power;
    lo = std::min(lo, r), hi = std::max(hi, r), sum += r;
  }
  return {lo >= 0.4 && hi <= 0.6,
          fmt::format("LSB/DSB audible power ratio in [{:.3f}, {:.3f}], mean {:.3f} over {} noises "
                      "(required [0.4, 0.6])",
                      lo, hi, sum / count, count)};
}

// Applies gain_db(f) to x by frequency-domain multiplication on a zero-padded block.
std::vector<double> apply_response(std::span<const double> x, const std::function<double(double)>& gain_db) {
  const std::size_t n = dsp::fast_size(2 * x.size());
  std::vector<double> padded(n, 0.0);
  std::copy(x.begin(), x.end(), padded.begin());
  const auto& plan = dsp::fft(n);
  auto spec = plan.forward(padded);
  for (std::size_t k = 0; k < spec.size(); ++k) spec[k] *= db_to_amplitude(gain_db(k * kBb / n));
  auto y = plan.inverse(spec);
  y.resize(x.size());
  return y;
}

// Per third-octave band gain of `out` over `in`, bands centred 125 Hz to 3.15 kHz.
std::pair<double, double> band_gain_range(std::span<const double> in, std::span<const double> out) {
  double lo = 1e9, hi = -1e9;
  for (int k = 0; k <= 14; ++k) {
    const double fc = 125.0 * std::pow(2.0, k / 3.0);
    const double a = fc / std::pow(2.0, 1.0 / 6.0), b = fc * std::pow(2.0, 1.0 / 6.0);
    const double g = oracle::db10(dsp::band_power(out, kBb, a, b) / dsp::band_power(in, kBb, a, b));
    lo = std::min(lo, g), hi = std::max(hi, g);
  }
  return {lo, hi};
}

Outcome injection_roundtrip() {
  double worst_corr = 1.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto n = phoneme_noise(seed, 2.0);
    const auto mod = txchain::modulate(txchain::to_ultrasonic(n), txchain::ModulationOptions{});
    const auto rec = channel::inject(mod, channel::NonlinearityModel{});
    worst_corr = std::min(worst_corr, oracle::best_correlation(rec.samples, n.samples, 8).second);
  }

  // Log sweep 100 Hz to 4 kHz through a -6 dB/octave transducer, with and without pre-compensation.
  const double seconds = 4.0, f1 = 100.0, f2 = 4000.0;
  const auto len = static_cast<std::size_t>(seconds * kBb);
  std::vector<double> sweep(len);
  const double k = std::log(f2 / f1);
  for (std::size_t t = 0; t < len; ++t) {
    const double tt = t / kBb;
    sweep[t] = 0.5 * std::sin(2 * std::numbers::pi * f1 * seconds / k * (std::exp(tt / seconds * k) - 1.0));
  }
  auto tilt_db = [](double f) { return -6.0 * std::log2(std::max(f, 20.0) / 1000.0); };
  auto chain = [&](const std::vector<double>& x) {
    const Waveform tilted{apply_response(x, tilt_db), kBb};
    const auto mod = txchain::modulate(txchain::to_ultrasonic(tilted), txchain::ModulationOptions{});
    return channel::inject(mod, channel::NonlinearityModel{}).samples;
  };
  const auto filter = txchain::design_precompensation(txchain::FrequencyResponse::tilt(-6.0, 1000.0, 20.0, 24000.0),
                                                      txchain::FrequencyResponse::flat());
  const auto pre = txchain::equalize(Waveform{sweep, kBb}, filter).samples;
  const auto [raw_lo, raw_hi] = band_gain_range(sweep, chain(sweep));
  const auto [comp_lo, comp_hi] = band_gain_range(sweep, chain(pre));
  const double raw = raw_hi - raw_lo, comp = comp_hi - comp_lo;
  return {worst_corr >= 0.95 && comp <= 2.0 && comp < raw,
          fmt::format("min aligned correlation {:.4f} (tol 0.95); in-band spread {:.2f} dB uncompensated, "
                      "{:.2f} dB compensated (tol 2 dB)",
                      worst_corr, raw, comp)};
}

Outcome recovery() {
  constexpr int kMixtures = 20;
  fixture::FixtureOptions fo;
  std::vector<Waveform> refs, demods;
  for (int i = 0; i < kMixtures; ++i) {
    const auto noise = phoneme_noise(1000 + i, 10.0, fmt::format("spk{}", i % 4));
    refs.push_back(recover::make_reference(noise, recover::ReferenceMode::Demodulated, {}, {}));
    channel::NonlinearityModel mic;
    mic.self_noise = true;
    mic.noise_seed = 2000 + i;
    demods.push_back(channel::inject(txchain::modulate(txchain::to_ultrasonic(noise), {}), mic));
  }
  std::vector<double> gains;
  int rejected = 0, wrong_trials = 0;
  for (int i = 0; i < kMixtures; ++i) {
    Rng rng(3000 + i);
    const auto speech = fixture::clean_speech(fo, i);
    const auto cir = channel::synthetic_cir(channel::CirOptions{}, rng);
    auto room = channel::apply_cir(demods[i], cir);
    room.samples.resize(demods[i].size());
    const auto shift = static_cast<std::int64_t>(std::llround(rng.uniform(-kBb, kBb)));
    for (double snr : {-5.0, 0.0}) {
      channel::MixOptions mo;
      mo.snr_db = snr;
      mo.shift_samples = shift;
      const auto rec = channel::mix_at_snr(speech, room, mo);
      const auto res = recover::cancel(rec.samples, refs[i], recover::RecoveryConfig{});
      gains.push_back(recover::si_snr(res.recovered, speech) - recover::si_snr(rec.samples, speech));
      const auto wrong = recover::cancel(rec.samples, refs[(i + 1) % kMixtures], recover::RecoveryConfig{});
      ++wrong_trials;
      if (!wrong.aligned && wrong.flag == "alignment_failed" && wrong.recovered.samples == rec.samples.samples)
        ++rejected;
    }
  }
  std::sort(gains.begin(), gains.end());
  const double median = 0.5 * (gains[gains.size() / 2 - 1] + gains[gains.size() / 2]);
  return {median >= 10.0 && gains.front() >= 0.0 && rejected == wrong_trials,
          fmt::format("SI-SNR improvement median {:.2f} dB (tol 10), min {:.2f} dB (tol 0) over {} mixtures; "
                      "wrong references rejected {}/{}",
                      median, gains.front(), gains.size(), rejected, wrong_trials)};
}

Outcome si_snr_properties() {
  const auto s = fixture::clean_speech(fixture::FixtureOptions{}, 0).samples;
  const auto e = oracle::white(s.size(), 9, 0.05);
  std::vector<double> est(s.size());
  for (std::size_t t = 0; t < s.size(); ++t) est[t] = s[t] + e[t];
  const double base = recover::si_snr(est, s);
  double worst_scale = 0.0;
  for (double k : {0.01, 0.5, 3.7, 250.0}) {
    std::vector<double> scaled(est), ref_scaled(s);
    for (auto& v : scaled) v *= k;
    for (auto& v : ref_scaled) v /= k;
    worst_scale = std::max(worst_scale, std::abs(recover::si_snr(scaled, s) - base));
    worst_scale = std::max(worst_scale, std::abs(recover::si_snr(est, ref_scaled) - base));
  }
  auto w = oracle::white(s.size(), 4);
  double d = 0.0, ss = 0.0;
  for (std::size_t t = 0; t < s.size(); ++t) d += w[t] * s[t], ss += s[t] * s[t];
  for (std::size_t t = 0; t < s.size(); ++t) w[t] -= d / ss * s[t];
  const double g = std::sqrt(ss / oracle::sum_sq(w));
  std::vector<double> ortho(s.size());
  for (std::size_t t = 0; t < s.size(); ++t) ortho[t] = s[t] + g * w[t];
  const double zero = recover::si_snr(ortho, s);
  return {worst_scale <= 1e-3 && std::abs(zero) <= 1e-3,
          fmt::format("max scale deviation {:.2e} dB (tol 1e-3); orthogonal equal-power case {:.2e} dB "
                      "(tol 0 +- 1e-3)",
                      worst_scale, zero)};
}

Outcome directivity() {
  const double at25 = channel::directivity_gain(25.0);
  const channel::TransducerModel tx;
  const double single = channel::demod_beamwidth(channel::ArrayLayout::single_pair(), tx, 1.0);
  const double array = channel::demod_beamwidth(channel::ArrayLayout::hexagonal(), tx, 1.0);
  return {std::abs(at25 + 10.0) <= 1e-9 && array >= 1.5 * single,
          fmt::format("gain at 25 deg {:.6f} dB; -10 dB beamwidth single {:.1f} deg, hexagonal {:.1f} deg "
                      "(ratio {:.2f}, required 1.5)",
                      at25, single, array, array / single)};
}

augment::PhonemeClip clip_of(std::vector<double> s) {
  augment::PhonemeClip c;
  c.samples = std::move(s);
  c.label = "AA";
  c.speaker_id = "acc";
  c.sample_rate = kBb;
  return c;
}

Outcome augmentation() {
  std::vector<std::string> failed;
  const auto tone = clip_of(oracle::sawtooth(0.30, kBb, [](double) { return 150.0; }));
  double worst_dur = 0.0;
  for (double a : {0.5, 0.8, 1.5, 1.8}) {
    const double got = augment::change_speed(tone, a).duration_s();
    worst_dur = std::max(worst_dur, std::abs(got / (0.30 / a) - 1.0));
  }
  if (worst_dur > 0.02) failed.push_back("duration");

  double worst_f0 = 0.0;
  for (double base : {120.0, 200.0}) {
    const auto clip = clip_of(oracle::sawtooth(0.4, kBb, [&](double) { return base; }));
    for (double a : {0.9, 1.1}) {
      const auto out = augment::shift_f0_mean(clip, a);
      const double expected = a * oracle::mean_f0(clip.samples, kBb);
      worst_f0 = std::max(worst_f0, std::abs(oracle::mean_f0(out.clip.samples, kBb) / expected - 1.0));
    }
  }
  if (worst_f0 > 0.10) failed.push_back("f0");

  const auto noise = clip_of(oracle::white(4800, 9, 0.1));
  double worst_energy = 0.0;
  for (double a : {0.5, 1.37, 2.0})
    worst_energy = std::max(worst_energy,
                            std::abs(oracle::rms(augment::scale_energy(noise, a).samples) / oracle::rms(noise.samples) - a));
  if (worst_energy > 1e-12) failed.push_back("energy");

  if (augment::reverse(augment::reverse(noise)).samples != noise.samples) failed.push_back("reversal");

  augment::AugmentConfig cfg;
  cfg.apply_probability = 0.0;
  Rng rng(1);
  for (int i = 0; i < 100; ++i)
    if (augment::augment(tone, cfg, rng).clip.samples != tone.samples) {
      failed.push_back("identity");
      break;
    }

  cfg.apply_probability = 0.5;
  const auto brief = clip_of(oracle::white(480, 5, 0.05));
  std::array<int, augment::kTransformCount> fired{};
  Rng draws(2024);
  for (int i = 0; i < 10000; ++i) {
    const auto r = augment::augment(brief, cfg, draws);
    for (std::size_t t = 0; t < fired.size(); ++t) fired[t] += r.fired[t];
  }
  int worst_dev = 0;
  for (int f : fired) worst_dev = std::max(worst_dev, std::abs(f - 5000));
  if (worst_dev > 150) failed.push_back("firing");

  std::string detail = fmt::format(
      "duration err {:.2e} (tol 0.02), f0 err {:.2e} (tol 0.10), energy err {:.1e}, "
      "firing max |n - 5000| = {} (3 sigma = 150)",
      worst_dur, worst_f0, worst_energy, worst_dev);
  for (const auto& f : failed) detail += " [" + f + " failed]";
  return {failed.empty(), detail};
}

Outcome determinism() {
  oracle::TempDir dir("acceptance");
  fixture::FixtureOptions o;
  o.speech_clips = 1;
  const auto paths = fixture::write_corpus(dir / "corpus", o);
  PipelineConfig cfg;
  cfg.seed = 99;
  cfg.input.manifest = paths.manifest.string();
  cfg.input.registration = {paths.registration.string()};
  cfg.input.speech = paths.speech.front().string();
  cfg.synth.duration_s = 9.0;
  cfg.mix.shift_samples = -12000;
  const auto a = pipeline::run_pipeline(cfg, dir / "a");
  const auto b = pipeline::run_pipeline(cfg, dir / "b");
  const bool same = !a.report_digest.empty() && a.report_digest == b.report_digest &&
                    pipeline::read_report_digest(dir / "b") == a.report_digest;
  return {same, fmt::format("report digests {} / {}", a.report_digest.substr(0, 16), b.report_digest.substr(0, 16))};
}

Outcome exposure() {
  channel::FieldMap hot;
  channel::FieldSample s;
  s.field.carrier_spl = 115.0;
  s.field.sideband_spl = 90.0;
  hot.samples.push_back(s);
  const bool flagged = channel::check_exposure(hot).size() == 1;

  channel::GridSpec office;
  office.x_min = 0.5, office.x_max = 4.0, office.y_min = -2.0, office.y_max = 2.0, office.step = 0.1;
  const auto map = channel::compute_field_map(channel::ArrayLayout::hexagonal(), channel::TransducerModel{}, office);
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& p : map.samples) worst = std::max(worst, p.field.combined_spl());
  const bool clean = channel::check_exposure(map).empty();
  return {flagged && clean && worst <= 95.0,
          fmt::format("115 dB point flagged: {}; office map {} points, max {:.1f} dB SPL (tol 95), "
                      "violations: {}",
                      flagged ? "yes" : "no", map.samples.size(), worst, clean ? "none" : "some")};
}

}  // namespace

int main() {
  criterion(1, "modulation identities", 1.0, modulation_identities);
  criterion(2, "energy parity", 0.0, energy_parity);
  criterion(3, "self-demodulation advantage", 60.0, self_demodulation);
  criterion(4, "injection roundtrip", 0.0, injection_roundtrip);
  criterion(5, "recovery", 300.0, recovery);
  criterion(6, "SI-SNR properties", 0.0, si_snr_properties);
  criterion(7, "directivity and array", 10.0, directivity);
  criterion(8, "augmentation contracts", 0.0, augmentation);
  criterion(9, "determinism", 0.0, determinism);
  criterion(10, "exposure check", 0.0, exposure);
  fmt::print("{} of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
