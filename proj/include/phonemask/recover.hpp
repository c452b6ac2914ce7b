#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "phonemask/audio.hpp"
#include "phonemask/channel.hpp"
#include "phonemask/txchain.hpp"

namespace phonemask::recover {

enum class ReferenceMode { Raw, Demodulated };
std::string_view to_string(ReferenceMode m);
ReferenceMode parse_reference_mode(std::string_view text);

struct RecoveryConfig {
  double sample_rate = kBasebandRate;
  std::size_t max_shift = 48000;
  std::size_t filter_taps = 4096;
  double mu = 0.1;
  double epsilon = 1e-3;
  double peak_floor = 0.05;
  // Taps reserved ahead of the aligned peak, for channel energy arriving
  // before the strongest correlation lag.
  std::size_t lead = 128;
  std::size_t max_passes = 12;
  double convergence_db = 0.1;
  ReferenceMode reference = ReferenceMode::Demodulated;

  void validate() const;
};

// 10*log10(|s_t|^2 / |e|^2) with s_t the projection of the estimate onto the
// reference; capped at +60 dB.
double si_snr(std::span<const double> estimate, std::span<const double> reference);
// Same, additionally requiring equal rates and at least one second of audio.
double si_snr(const Waveform& estimate, const Waveform& reference);

struct Alignment {
  std::int64_t lag = 0;  // recording[t] ~ reference[t - lag]
  double peak = 0.0;     // normalised cross-correlation at lag
};

// Normalised cross-correlation of the recording against the reference over
// [-max_shift, max_shift]; coarse pass on 1 ms energy envelopes, refined at
// full rate. Throws AlignmentError when the best peak is below the floor.
Alignment align(std::span<const double> recording, std::span<const double> reference,
                const RecoveryConfig& cfg);

// Normalised cross-correlation at one lag.
double ncc_at(std::span<const double> recording, std::span<const double> reference,
              std::int64_t lag);

struct ChannelEstimate {
  std::vector<double> taps;
  bool converged = false;
  std::size_t passes = 0;
  double residual_db = 0.0;  // residual power relative to the recording, final filter
};

// Frequency-domain block NLMS (constrained, overlap-save) run in passes over
// the signal. The returned filter is the mean of the weights over the last
// pass. Converged when a pass changes the residual power by < convergence_db
// or the residual falls 60 dB below the recording; three growing passes in a
// row throw EstimationError.
ChannelEstimate estimate_channel(std::span<const double> recording,
                                 std::span<const double> aligned_ref, const RecoveryConfig& cfg);

// reference[t - start] over `length` samples, zero outside the reference.
std::vector<double> aligned_reference(std::span<const double> reference, std::size_t length,
                                      std::int64_t start);

struct CancelResult {
  Waveform recovered;
  bool aligned = false;
  std::int64_t lag = 0;
  double peak = 0.0;
  bool converged = false;
  std::string flag;  // "alignment_failed" when the recording was passed through
};

CancelResult cancel(const Waveform& recording, const Waveform& reference, const RecoveryConfig& cfg);

// The reference a recording actually contains: the noise as the microphone
// model demodulates it (Demodulated) or the logged noise itself (Raw).
Waveform make_reference(const Waveform& noise, ReferenceMode mode,
                        const txchain::ModulationOptions& mod,
                        const channel::NonlinearityModel& mic,
                        double ultrasonic_rate = kUltrasonicRate);

struct RecoveryReport {
  std::int64_t lag = 0;
  bool aligned = false;
  bool converged = false;
  double si_snr_before = 0.0;
  double si_snr_after = 0.0;

  std::string to_json_line() const;
};

}  // namespace phonemask::recover
