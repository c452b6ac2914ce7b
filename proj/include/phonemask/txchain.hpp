#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "phonemask/audio.hpp"
#include "phonemask/synth.hpp"

namespace phonemask::txchain {

enum class Scheme { DSB, LSB, USB };
std::string_view to_string(Scheme s);
Scheme parse_scheme(std::string_view text);

inline constexpr double kDefaultCarrierHz = 40000.0;
inline constexpr double kBasebandBandwidthHz = 4000.0;

// Imaginary part of the analytic signal, computed circularly over the whole
// input (DC and Nyquist bins are dropped).
std::vector<double> hilbert(std::span<const double> x);

struct ModulationOptions {
  double carrier_hz = kDefaultCarrierHz;
  Scheme scheme = Scheme::LSB;
  bool include_carrier = true;
  // Carrier amplitude as a multiple of the sideband signal's peak.
  double carrier_ratio = 1.0;
  double bandwidth_hz = kBasebandBandwidthHz;
};

// The sideband signal and the carrier are separate transmitter paths; they
// only meet in the air (see combined()).
struct ModulatedSignal {
  Waveform sideband;
  double carrier_hz = kDefaultCarrierHz;
  Scheme scheme = Scheme::LSB;
  bool includes_carrier = false;
  double carrier_amplitude = 0.0;

  std::vector<double> carrier() const;
  // Sideband plus carrier, as a microphone in the overlap region sees it.
  std::vector<double> combined() const;
};

// Baseband (48 kHz) to the ultrasonic rate (192 kHz).
Waveform to_ultrasonic(const Waveform& baseband, double ultrasonic_rate = kUltrasonicRate);

// `n` must already be at the transmit rate; carrier + bandwidth must stay
// below Nyquist.
ModulatedSignal modulate(const Waveform& n, double carrier_hz, Scheme scheme);
ModulatedSignal modulate(const Waveform& n, const ModulationOptions& opts);

std::vector<double> cosine_tone(std::size_t n, double freq_hz, double sample_rate,
                                double amplitude = 1.0);

// ---- frequency responses ------------------------------------------------------------

struct FrequencyResponse {
  std::vector<double> grid_hz;  // ascending
  std::vector<double> gain_db;

  void validate() const;
  // Linear interpolation in frequency, held constant past the ends.
  double gain_db_at(double freq_hz) const;
  bool covers(double lo_hz, double hi_hz) const;

  static FrequencyResponse flat(double lo_hz = 0.0, double hi_hz = 24000.0);
  // gain = db_per_octave * log2(f / ref_hz), sampled log-spaced over [lo, hi].
  static FrequencyResponse tilt(double db_per_octave, double ref_hz, double lo_hz, double hi_hz,
                                std::size_t points = 256);
  // Two-column text `freq_hz gain_db`; '#' starts a comment.
  static FrequencyResponse load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

struct PrecompOptions {
  std::size_t num_taps = 1025;
  double sample_rate = kBasebandRate;
  double band_lo_hz = 50.0;
  double band_hi_hz = 4000.0;
  double max_boost_db = 20.0;
  double upper_transition_hz = 500.0;
};

struct CompensationFilter {
  std::vector<double> fir_taps;
  double sample_rate = kBasebandRate;
  double band_lo_hz = 50.0;
  double band_hi_hz = 4000.0;
  std::vector<std::string> warnings;

  std::size_t delay() const { return fir_taps.empty() ? 0 : (fir_taps.size() - 1) / 2; }
  double gain_db_at(double freq_hz) const;
  static CompensationFilter identity(double sample_rate = kBasebandRate);
};

// Target gain in dB that design_precompensation fits (before FIR design).
double precomp_target_db(const FrequencyResponse& fr_equiv, const FrequencyResponse& fr_rx,
                         const PrecompOptions& opts, double freq_hz);

// Linear-phase FIR approximating fr_rx / fr_equiv inside the band and unity
// outside. Boosts above opts.max_boost_db are clamped and reported in warnings.
CompensationFilter design_precompensation(const FrequencyResponse& fr_equiv,
                                          const FrequencyResponse& fr_rx,
                                          const PrecompOptions& opts = {});

// Filters with the group delay removed so sample 0 stays sample 0.
Waveform equalize(const Waveform& w, const CompensationFilter& filter);
synth::JammingNoise equalize(const synth::JammingNoise& noise, const CompensationFilter& filter);

}  // namespace phonemask::txchain
