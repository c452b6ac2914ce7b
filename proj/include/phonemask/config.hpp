#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "phonemask/asr.hpp"
#include "phonemask/channel.hpp"
#include "phonemask/recover.hpp"
#include "phonemask/synth.hpp"
#include "phonemask/txchain.hpp"

namespace phonemask {

struct InputSection {
  std::string manifest;               // phoneme alignment manifest
  std::string classifier;             // optional `label,vowel|consonant` table
  std::vector<std::string> registration;  // one path per user; two or more form a group
  std::string gallery;                // optional voiceprint sidecar
  std::string speech;                 // clean speech mixed with the noise
  std::string transcript;             // optional reference transcript for WER
};

struct ModulationSection {
  txchain::ModulationOptions options;
  double ultrasonic_rate = kUltrasonicRate;
};

struct PrecompSection {
  bool enabled = false;
  std::string fr_equiv;  // `freq_hz gain_db` files; empty = flat
  std::string fr_rx;
  txchain::PrecompOptions options;
};

struct ChannelSection {
  channel::NonlinearityModel mic;
  std::string cir_dir;  // empty: synthetic CIR
  channel::CirOptions synthetic_cir;
  channel::TransducerModel transducer;
  double array_radius_m = 0.1;
  double array_tilt_deg = 25.0;
};

struct MixSection {
  double snr_db = 0.0;
  std::int64_t shift_samples = 0;
  std::optional<double> ambient_dbfs;
  std::vector<double> sweep_snr_db{-5.0, -3.0, -1.0, 0.0, 1.0, 3.0, 5.0};
};

struct PipelineConfig {
  std::uint64_t seed = 0;  // overrides synth.seed
  InputSection input;
  synth::SynthConfig synth;
  ModulationSection modulation;
  PrecompSection precomp;
  ChannelSection channel;
  MixSection mix;
  recover::RecoveryConfig recovery;
  asr::AsrConfig asr;
  // Fixed noise-log timestamp; empty means the current time.
  std::string timestamp;

  // Canonical JSON: sorted keys, shortest round-trip numbers.
  std::string dump(int indent = -1) const;
  static PipelineConfig parse(const std::string& text);
  static PipelineConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // SHA-256 of dump().
  std::string digest() const;
  // Throws ConfigError naming the offending field.
  void validate() const;

  // synth config with the pipeline seed applied.
  synth::SynthConfig synth_config() const;
};

}  // namespace phonemask
