#include "phonemask/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numbers>

#include <fmt/format.h>

#include "phonemask/digest.hpp"
#include "phonemask/errors.hpp"

namespace phonemask::synth {

using inventory::PhonemeClass;
using inventory::PhonemeClip;

namespace {

// Each drawn clip must advance the sequence by at least this much past the
// crossfade, otherwise a fill loop could stall.
constexpr double kMinAdvanceS = 0.005;

std::size_t crossfade_samples(double crossfade_ms, double rate) {
  return static_cast<std::size_t>(std::lround(crossfade_ms * 1e-3 * rate));
}

void append_crossfaded(std::vector<double>& out, std::span<const double> clip,
                       const std::vector<double>& fade_in) {
  const std::size_t n = fade_in.size();
  if (out.empty() || n == 0) {
    out.insert(out.end(), clip.begin(), clip.end());
    return;
  }
  const std::size_t base = out.size() - n;
  for (std::size_t i = 0; i < n; ++i)
    out[base + i] = out[base + i] * (1.0 - fade_in[i]) + clip[i] * fade_in[i];
  out.insert(out.end(), clip.begin() + static_cast<std::ptrdiff_t>(n), clip.end());
}

std::vector<std::size_t> usable(const inventory::PhonemeInventory& inv,
                                const std::vector<std::size_t>& ids, std::size_t min_len) {
  std::vector<std::size_t> out;
  for (auto id : ids)
    if (inv.clip(id).samples.size() >= min_len) out.push_back(id);
  return out;
}

// Draws a clip and augments it; falls back to the original when the
// augmented clip got too short to crossfade.
PhonemeClip draw_clip(const inventory::PhonemeInventory& inv, const std::vector<std::size_t>& pool,
                      const SynthConfig& cfg, Rng& rng, std::size_t min_len, Sequence& seq) {
  const std::size_t id = pool[rng.index(pool.size())];
  seq.clip_ids.push_back(id);
  const PhonemeClip& clip = inv.clip(id);
  if (cfg.augment.apply_probability <= 0.0) return clip;
  auto res = augment::augment(clip, cfg.augment, rng);
  if (res.clip.samples.size() < min_len) return clip;
  return std::move(res.clip);
}

std::string fmt_range(const augment::Range& r) { return fmt::format("[{},{}]", r.lo, r.hi); }

}  // namespace

void SynthConfig::validate() const {
  if (!(s1_acceleration > 0.0)) throw ContractError("s1_acceleration must be positive");
  if (!(s2_speed.lo <= s2_speed.hi) || !augment::kSpeedBounds.contains(s2_speed.lo) ||
      !augment::kSpeedBounds.contains(s2_speed.hi))
    throw ContractError(fmt::format("s2 speed range {} outside [0.3, 1.8]", fmt_range(s2_speed)));
  if (!(s2_gap_s.lo >= 0.0 && s2_gap_s.lo <= s2_gap_s.hi))
    throw ContractError(fmt::format("invalid s2 gap range {}", fmt_range(s2_gap_s)));
  if (!(crossfade_ms > 0.0)) throw ContractError("crossfade must be positive");
  bool any = false;
  for (double w : sequence_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ContractError("sequence weights must be >= 0");
    any = any || w > 0.0;
  }
  if (!any) throw ContractError("at least one sequence weight must be positive");
  if (!(duration_s > 0.0)) throw ContractError("duration must be positive");
  if (!(headroom_dbfs <= 0.0)) throw ContractError("headroom must be <= 0 dBFS");
  augment.validate();
}

std::string SynthConfig::digest() const {
  const auto& a = augment;
  const std::string canon = fmt::format(
      "s1_acceleration={};s2_speed={};s2_gap_s={};crossfade_ms={};weights=[{},{},{}];"
      "headroom_dbfs={};aug.speed={};aug.f0_mean={};aug.f0_contour={};aug.energy={};aug.p={}",
      s1_acceleration, fmt_range(s2_speed), fmt_range(s2_gap_s), crossfade_ms,
      sequence_weights[0], sequence_weights[1], sequence_weights[2], headroom_dbfs,
      fmt_range(a.speed_range), fmt_range(a.f0_mean_range), fmt_range(a.f0_contour_range),
      fmt_range(a.energy_range), a.apply_probability);
  return sha256_hex(canon);
}

std::vector<double> fade_in_curve(std::size_t n) {
  // Power-normalised halves of a Hamming window: smooth, sums to one with
  // its mirror, and starts near zero instead of at the 0.08 pedestal.
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double ph = std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    const double rise = 0.54 - 0.46 * std::cos(ph);
    const double fall = 0.54 + 0.46 * std::cos(ph);
    w[i] = rise * rise / (rise * rise + fall * fall);
  }
  return w;
}

std::vector<double> crossfade_concat(std::span<const PhonemeClip> clips, double crossfade_ms) {
  if (clips.empty()) return {};
  const double rate = clips.front().sample_rate;
  const std::size_t n = crossfade_samples(crossfade_ms, rate);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& c = clips[i];
    if (std::abs(c.sample_rate - rate) > 1e-9)
      throw ContractError(fmt::format("clip {} ('{}') has rate {} != {}", i, c.label,
                                      c.sample_rate, rate));
    if (clips.size() > 1 && c.samples.size() < n)
      throw ContractError(fmt::format("clip {} ('{}', speaker {}) is {:.1f} ms, shorter than the "
                                      "{:.1f} ms crossfade",
                                      i, c.label, c.speaker_id, 1e3 * c.duration_s(),
                                      crossfade_ms));
  }
  const auto fade = fade_in_curve(n);
  std::vector<double> out;
  for (const auto& c : clips) append_crossfaded(out, c.samples, fade);
  return out;
}

std::vector<double> accelerate(std::span<const double> x, double factor, double sample_rate) {
  if (factor == 1.0) return {x.begin(), x.end()};
  return augment::time_stretch(x, factor, sample_rate);
}

std::string Sequence::trace_digest() const {
  Digest d;
  for (auto id : clip_ids) d.update(static_cast<double>(id));
  d.update(std::string_view("|"));
  d.update(std::span<const double>(speed_factors));
  d.update(std::string_view("|"));
  d.update(std::span<const double>(gaps_s));
  return d.finish();
}

S2Step draw_s2_step(const SynthConfig& cfg, Rng& rng) {
  S2Step s;
  s.speed = rng.uniform(cfg.s2_speed.lo, cfg.s2_speed.hi);
  s.gap_s = rng.uniform(cfg.s2_gap_s.lo, cfg.s2_gap_s.hi);
  return s;
}

Sequence build_s1(const inventory::PhonemeInventory& inv,
                  const voiceprint::SpeakerProfile& profile, const SynthConfig& cfg, Rng& rng) {
  cfg.validate();
  const double rate = inv.sample_rate();
  const std::size_t xfade = crossfade_samples(cfg.crossfade_ms, rate);
  const std::size_t min_len = xfade + static_cast<std::size_t>(std::lround(kMinAdvanceS * rate));
  const auto pool = usable(inv, inv.ids(profile.matched_speaker_id, PhonemeClass::Vowel), min_len);
  if (pool.empty())
    throw SynthesisError(fmt::format("speaker '{}' has no vowel clips of at least {:.0f} ms",
                                     profile.matched_speaker_id, 1e3 * min_len / rate));

  const auto target = static_cast<std::size_t>(std::llround(cfg.duration_s * rate));
  const auto assembled =
      static_cast<std::size_t>(std::ceil(static_cast<double>(target + 1) * cfg.s1_acceleration)) + 1;
  const auto fade = fade_in_curve(xfade);
  Sequence seq;
  while (seq.samples.size() < assembled) {
    const auto clip = draw_clip(inv, pool, cfg, rng, min_len, seq);
    append_crossfaded(seq.samples, clip.samples, fade);
  }
  seq.samples = accelerate(seq.samples, cfg.s1_acceleration, rate);
  seq.samples.resize(target);
  return seq;
}

Sequence build_s2(const inventory::PhonemeInventory& inv,
                  const voiceprint::SpeakerProfile& profile, const SynthConfig& cfg, Rng& rng) {
  cfg.validate();
  const double rate = inv.sample_rate();
  const std::size_t xfade = crossfade_samples(cfg.crossfade_ms, rate);
  const std::size_t min_len = xfade + static_cast<std::size_t>(std::lround(kMinAdvanceS * rate));
  const auto pool = usable(inv, inv.ids(profile.matched_speaker_id, PhonemeClass::Vowel), min_len);
  if (pool.empty())
    throw SynthesisError(fmt::format("speaker '{}' has no vowel clips of at least {:.0f} ms",
                                     profile.matched_speaker_id, 1e3 * min_len / rate));

  const auto target = static_cast<std::size_t>(std::llround(cfg.duration_s * rate));
  Sequence seq;
  while (seq.samples.size() < target) {
    auto clip = draw_clip(inv, pool, cfg, rng, min_len, seq);
    const auto step = draw_s2_step(cfg, rng);
    seq.speed_factors.push_back(step.speed);
    seq.gaps_s.push_back(step.gap_s);
    clip = augment::change_speed(clip, step.speed);

    // Fade into and out of the surrounding silence.
    auto& s = clip.samples;
    const std::size_t ramp = std::min(xfade, s.size() / 2);
    const auto fade = fade_in_curve(ramp);
    for (std::size_t i = 0; i < ramp; ++i) {
      s[i] *= fade[i];
      s[s.size() - 1 - i] *= fade[i];
    }
    seq.samples.insert(seq.samples.end(), s.begin(), s.end());
    seq.samples.resize(seq.samples.size() +
                           static_cast<std::size_t>(std::llround(step.gap_s * rate)),
                       0.0);
  }
  seq.samples.resize(target);
  return seq;
}

Sequence build_s3(const inventory::PhonemeInventory& inv, const SynthConfig& cfg, Rng& rng) {
  cfg.validate();
  const double rate = inv.sample_rate();
  const std::size_t xfade = crossfade_samples(cfg.crossfade_ms, rate);
  const std::size_t min_len = xfade + static_cast<std::size_t>(std::lround(kMinAdvanceS * rate));
  const auto pool = usable(inv, inv.ids(PhonemeClass::Consonant), min_len);
  if (pool.empty())
    throw SynthesisError(fmt::format("inventory has no consonant clips of at least {:.0f} ms",
                                     1e3 * min_len / rate));

  const auto target = static_cast<std::size_t>(std::llround(cfg.duration_s * rate));
  const auto fade = fade_in_curve(xfade);
  Sequence seq;
  while (seq.samples.size() < target) {
    const auto clip = draw_clip(inv, pool, cfg, rng, min_len, seq);
    append_crossfaded(seq.samples, clip.samples, fade);
  }
  seq.samples.resize(target);
  return seq;
}

// ---- noise log -------------------------------------------------------------------

std::string utc_timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string format_noise_log(const NoiseLog& log) {
  return fmt::format("{},{},{},{},{}", log.start_timestamp, log.seed, log.config_digest,
                     log.duration_s, log.waveform_path ? log.waveform_path->string() : "");
}

NoiseLog parse_noise_log(const std::string& line) {
  std::vector<std::string> f;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    f.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (f.size() < 4 || f.size() > 5)
    throw ParseError("noise log: expected timestamp,seed,config_digest,duration_s[,path]", 1);
  NoiseLog log;
  log.start_timestamp = f[0];
  try {
    std::size_t used = 0;
    log.seed = std::stoull(f[1], &used);
    if (used != f[1].size()) throw std::invalid_argument("seed");
    log.duration_s = std::stod(f[3], &used);
    if (used != f[3].size()) throw std::invalid_argument("duration");
  } catch (const std::exception&) {
    throw ParseError(fmt::format("noise log: bad seed '{}' or duration '{}'", f[1], f[3]), 1);
  }
  log.config_digest = f[2];
  if (f.size() == 5 && !f[4].empty()) log.waveform_path = f[4];
  return log;
}

void write_noise_log(const std::filesystem::path& path, const NoiseLog& log) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error(fmt::format("cannot write noise log {}", path.string()));
  out << format_noise_log(log) << '\n';
}

NoiseLog read_noise_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError(fmt::format("cannot open noise log {}", path.string()));
  std::string line, last;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line.front() != '#') last = line;
  }
  if (last.empty()) throw ParseError(fmt::format("noise log {} is empty", path.string()), 1);
  return parse_noise_log(last);
}

// ---- superposition -------------------------------------------------------------------

JammingNoise synthesize_noise(const inventory::PhonemeInventory& inv,
                              const voiceprint::SpeakerProfile& profile, const SynthConfig& cfg,
                              std::optional<std::string> timestamp) {
  cfg.validate();
  if (!inv.ready_for_synthesis())
    throw SynthesisError("inventory needs at least one vowel and one consonant");

  JammingNoise noise;
  noise.log.start_timestamp = timestamp ? *timestamp : utc_timestamp_now();
  noise.log.seed = cfg.seed;
  noise.log.config_digest = cfg.digest();
  noise.log.duration_s = cfg.duration_s;

  const Rng master(cfg.seed);
  const auto target = static_cast<std::size_t>(std::llround(cfg.duration_s * inv.sample_rate()));
  std::vector<double> mix(target, 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    if (cfg.sequence_weights[i] <= 0.0) continue;
    Rng rng = master.derive(i + 1);
    Sequence seq = i == 0   ? build_s1(inv, profile, cfg, rng)
                   : i == 1 ? build_s2(inv, profile, cfg, rng)
                            : build_s3(inv, cfg, rng);
    const double level = rms(seq.samples);
    if (!(level > 0.0)) throw SynthesisError(fmt::format("sequence S{} is silent", i + 1));
    for (double& v : seq.samples) v /= level;
    for (std::size_t t = 0; t < target; ++t) mix[t] += cfg.sequence_weights[i] * seq.samples[t];
    noise.components[i] = std::move(seq.samples);
  }

  const double p = peak(mix);
  if (!(p > 0.0)) throw SynthesisError("superposed noise is silent");
  const double gain = db_to_amplitude(cfg.headroom_dbfs) / p;
  for (double& v : mix) v *= gain;
  noise.waveform = Waveform{std::move(mix), inv.sample_rate()};
  return noise;
}

Waveform replay(const NoiseLog& log, const inventory::PhonemeInventory& inv,
                const voiceprint::SpeakerProfile& profile, SynthConfig cfg) {
  cfg.seed = log.seed;
  cfg.duration_s = log.duration_s;
  if (cfg.digest() != log.config_digest)
    throw ContractError(fmt::format("noise log config digest {} does not match the supplied "
                                    "configuration ({})",
                                    log.config_digest, cfg.digest()));
  return synthesize_noise(inv, profile, cfg, log.start_timestamp).waveform;
}

}  // namespace phonemask::synth
