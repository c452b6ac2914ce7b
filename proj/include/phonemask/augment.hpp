#pragma once

#include <array>
#include <span>
#include <string_view>
#include <vector>

#include "phonemask/inventory.hpp"
#include "phonemask/rng.hpp"

namespace phonemask::augment {

using inventory::PhonemeClip;

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

// Bounds each transform accepts; AugmentConfig ranges must lie inside them.
inline constexpr Range kSpeedBounds{0.3, 1.8};
inline constexpr Range kF0MeanBounds{0.9, 1.1};
inline constexpr Range kF0ContourBounds{0.7, 1.3};
inline constexpr Range kEnergyBounds{0.5, 2.0};

struct AugmentConfig {
  Range speed_range = kSpeedBounds;
  Range f0_mean_range = kF0MeanBounds;
  Range f0_contour_range = kF0ContourBounds;
  Range energy_range = kEnergyBounds;
  double apply_probability = 0.5;

  // Throws ContractError when a range leaves its bounds or p is outside [0, 1].
  void validate() const;
};

// ---- pitch analysis -------------------------------------------------------

struct PitchFrame {
  double time_s = 0.0;       // frame centre
  double f0_hz = 0.0;        // 0 when unvoiced
  double periodicity = 0.0;  // normalised autocorrelation at the chosen lag
  bool voiced = false;
};

struct PitchTrackOptions {
  double min_f0_hz = 60.0;
  double max_f0_hz = 500.0;
  double window_s = 0.020;
  double hop_s = 0.005;
  double yin_threshold = 0.15;
  double voicing_threshold = 0.3;  // autocorrelation peak below this => unvoiced
};

// YIN-style tracker: cumulative-mean-normalised difference for lag choice,
// normalised autocorrelation for the voicing decision.
std::vector<PitchFrame> track_pitch(std::span<const double> x, double sample_rate,
                                    const PitchTrackOptions& opts = {});

// Median F0 over voiced frames (0 if none).
double median_f0(const std::vector<PitchFrame>& track);
double mean_f0(const std::vector<PitchFrame>& track);

// A clip counts as voiced when at least half of its frames (and at least two) are.
bool is_voiced(const std::vector<PitchFrame>& track);

// ---- time-scale modification ----------------------------------------------

// Pitch-preserving time stretch (WSOLA). Output has round(n / speed) samples.
std::vector<double> time_stretch(std::span<const double> x, double speed, double sample_rate);

// ---- transforms -------------------------------------------------------------

struct PitchEdit {
  PhonemeClip clip;
  bool noop = false;  // input was unvoiced and returned unchanged
};

PhonemeClip change_speed(const PhonemeClip& clip, double factor);
PitchEdit shift_f0_mean(const PhonemeClip& clip, double factor);
// F0' = factor * (F0 - mean F0) + mean F0, frame by frame.
PitchEdit warp_f0_contour(const PhonemeClip& clip, double factor);
PhonemeClip scale_energy(const PhonemeClip& clip, double factor);
PhonemeClip reverse(const PhonemeClip& clip);

enum class Transform : std::size_t { Speed = 0, F0Mean, F0Contour, Energy, Reverse };
inline constexpr std::size_t kTransformCount = 5;
std::string_view to_string(Transform t);

struct AugmentResult {
  PhonemeClip clip;
  std::array<bool, kTransformCount> fired{};
  std::array<double, kTransformCount> factors{};
};

// Applies each transform independently with probability p, in the order of
// `Transform`. Every call consumes the same number of draws from `rng`
// whatever fires, so results depend only on (clip, cfg, seed).
AugmentResult augment(const PhonemeClip& clip, const AugmentConfig& cfg, Rng& rng);

}  // namespace phonemask::augment
