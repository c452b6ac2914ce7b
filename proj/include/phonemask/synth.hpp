#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "phonemask/augment.hpp"
#include "phonemask/inventory.hpp"
#include "phonemask/rng.hpp"
#include "phonemask/voiceprint.hpp"

namespace phonemask::synth {

struct SynthConfig {
  double s1_acceleration = 1.1;
  augment::Range s2_speed{0.3, 1.8};
  augment::Range s2_gap_s{0.0, 0.15};
  double crossfade_ms = 25.0;
  std::array<double, 3> sequence_weights{1.0, 1.0, 1.0};
  double duration_s = 10.0;
  double headroom_dbfs = -1.0;
  std::uint64_t seed = 0;
  augment::AugmentConfig augment{};

  void validate() const;
  // SHA-256 over a canonical rendering of the generation parameters.
  // Seed and duration are logged separately and are not part of it.
  std::string digest() const;
};

// Overlap-adds adjacent clips across `crossfade_ms` with complementary
// Hamming-derived fades. Output length is sum(len) - (n-1)*crossfade.
std::vector<double> crossfade_concat(std::span<const inventory::PhonemeClip> clips,
                                     double crossfade_ms);

// Rising fade; the matching falling fade is 1 - fade_in.
std::vector<double> fade_in_curve(std::size_t n);

// Pitch-preserving compression by `factor` (> 1 shortens).
std::vector<double> accelerate(std::span<const double> x, double factor, double sample_rate);

// What a builder drew, for reproducibility checks and tests.
struct Sequence {
  std::vector<double> samples;
  std::vector<std::size_t> clip_ids;  // inventory ids, in draw order
  std::vector<double> speed_factors;  // S2 only
  std::vector<double> gaps_s;         // S2 only
  std::string trace_digest() const;
};

struct S2Step {
  double speed = 1.0;
  double gap_s = 0.0;
};
S2Step draw_s2_step(const SynthConfig& cfg, Rng& rng);

Sequence build_s1(const inventory::PhonemeInventory& inv, const voiceprint::SpeakerProfile& profile,
                  const SynthConfig& cfg, Rng& rng);
Sequence build_s2(const inventory::PhonemeInventory& inv, const voiceprint::SpeakerProfile& profile,
                  const SynthConfig& cfg, Rng& rng);
// Consonants from every speaker in the inventory.
Sequence build_s3(const inventory::PhonemeInventory& inv, const SynthConfig& cfg, Rng& rng);

struct NoiseLog {
  std::string start_timestamp;  // ISO-8601 UTC
  std::uint64_t seed = 0;
  std::string config_digest;
  double duration_s = 0.0;
  std::optional<std::filesystem::path> waveform_path;
};

std::string format_noise_log(const NoiseLog& log);
NoiseLog parse_noise_log(const std::string& line);
void write_noise_log(const std::filesystem::path& path, const NoiseLog& log);
NoiseLog read_noise_log(const std::filesystem::path& path);

std::string utc_timestamp_now();

struct JammingNoise {
  Waveform waveform;
  NoiseLog log;
  std::array<std::vector<double>, 3> components;  // RMS-normalised S1, S2, S3
};

// Sum of RMS-normalised, weighted S1/S2/S3 peak-normalised to the headroom
// level. Fully determined by (inventory, profile, cfg). A timestamp can be
// supplied for reproducible logs; otherwise the current UTC time is used.
JammingNoise synthesize_noise(const inventory::PhonemeInventory& inv,
                              const voiceprint::SpeakerProfile& profile, const SynthConfig& cfg,
                              std::optional<std::string> timestamp = std::nullopt);

// Regenerates the waveform recorded in `log`; the config digest (with the
// log's seed and duration substituted) must match.
Waveform replay(const NoiseLog& log, const inventory::PhonemeInventory& inv,
                const voiceprint::SpeakerProfile& profile, SynthConfig cfg);

}  // namespace phonemask::synth
