#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "phonemask/audio.hpp"
#include "phonemask/rng.hpp"
#include "phonemask/txchain.hpp"

namespace phonemask::channel {

// ---- microphone nonlinearity ---------------------------------------------------------

struct NonlinearityModel {
  double a1 = 1.0;
  double a2 = 0.1;
  double lowpass_cutoff_hz = 24000.0;  // limited to 90% of the output Nyquist
  double output_rate = kBasebandRate;
  double mic_noise_floor_dbfs = -80.0;
  bool self_noise = false;  // add white noise at the floor level
  std::uint64_t noise_seed = 0;

  void validate(double input_rate) const;
};

// lowpass(a1*x + a2*x^2), decimated to the output rate, with the DC offset of
// the quadratic term removed (microphones are AC coupled).
Waveform mic_capture(const Waveform& input, const NonlinearityModel& model);

// What a microphone near the array records: carrier and sideband superposed.
Waveform inject(const txchain::ModulatedSignal& mod, const NonlinearityModel& model);

struct Leakage {
  Waveform audible;  // lowpass(a2 * sideband^2), DC removed
  double audible_power = 0.0;  // mean-square power in [20 Hz, 16 kHz]
};

// Transmitter self-demodulation of the sideband signal alone.
Leakage self_demod_leakage(const txchain::ModulatedSignal& mod, double a2);

// ---- transducers and arrays ----------------------------------------------------------

// -10 * (theta / 25)^2 dB, floored at -60 dB.
double directivity_gain(double theta_deg);

struct TransducerModel {
  double axial_spl_at_1m = 82.0;
  double absorption_db_per_m = 1.3;
  double reference_angle_deg = 25.0;
  double drop_at_reference_db = 10.0;
  double floor_db = -60.0;

  double directivity_db(double theta_deg) const;
};

using Vec3 = std::array<double, 3>;

enum class Group { Carrier, Sideband };

struct Element {
  Vec3 position{};
  Vec3 orientation{1.0, 0.0, 0.0};  // unit vector
  Group group = Group::Carrier;
};

struct ArrayLayout {
  std::vector<Element> elements;

  void validate() const;
  std::size_t count(Group g) const;

  static ArrayLayout single_pair();
  // Six transducers on a sphere, tilted `tilt_deg` away from boresight (+x)
  // at azimuths 30, 90, ..., 330 degrees around it; carriers at 30/150/270,
  // sidebands at 90/210/330. Mirror-symmetric under y -> -y.
  static ArrayLayout hexagonal(double sphere_radius_m = 0.1, double tilt_deg = 25.0);
};

struct FieldPoint {
  double carrier_spl = 0.0;   // dB SPL
  double sideband_spl = 0.0;  // dB SPL
  double demod_proxy = 0.0;   // carrier amplitude * sideband amplitude (linear)

  double demod_proxy_db() const;
  double combined_spl() const;
};

inline constexpr double kMinElementDistanceM = 0.01;

FieldPoint field_at_point(const ArrayLayout& array, const Vec3& point, const TransducerModel& tx);

struct FieldSample {
  double x = 0.0;
  double y = 0.0;
  FieldPoint field;
};

struct GridSpec {
  double x_min = -3.0, x_max = 3.0;
  double y_min = -3.0, y_max = 3.0;
  double step = 0.05;
  double z = 0.0;
};

struct FieldMap {
  std::vector<FieldSample> samples;
  std::size_t skipped_near_elements = 0;

  void write_csv(const std::filesystem::path& path) const;
};

// Grid points closer than kMinElementDistanceM to an element are skipped.
FieldMap compute_field_map(const ArrayLayout& array, const TransducerModel& tx, const GridSpec& grid);

struct ExposureViolation {
  double x = 0.0;
  double y = 0.0;
  double spl = 0.0;
};

inline constexpr double kExposureLimitDbSpl = 110.0;

std::vector<ExposureViolation> check_exposure(const FieldMap& map,
                                              double limit_db_spl = kExposureLimitDbSpl);

// Angular width (degrees) over which the demod proxy stays within `drop_db`
// (10*log10 units) of its maximum, on a circle of `radius_m` in the z = 0 plane.
double demod_beamwidth(const ArrayLayout& array, const TransducerModel& tx, double radius_m,
                       double drop_db = 10.0, double step_deg = 0.1);

// ---- room acoustics and mixing ---------------------------------------------------------

// Full linear convolution; the CIR must be at most one second long.
Waveform apply_cir(const Waveform& x, const Waveform& cir);

struct CirOptions {
  double length_s = 0.05;
  std::size_t direct_delay = 0;
  double tail_db = -6.0;    // tail level just after the direct path
  double decay_db = 60.0;   // decay over the whole length
};

// Direct path plus an exponentially decaying Gaussian tail.
Waveform synthetic_cir(const CirOptions& opts, Rng& rng, double sample_rate = kBasebandRate);

struct NamedCir {
  std::string id;
  Waveform cir;
};

// Every .wav in `dir` (sorted by name), resampled to `sample_rate`.
std::vector<NamedCir> load_cir_directory(const std::filesystem::path& dir,
                                         double sample_rate = kBasebandRate);

struct MixMetadata {
  double alpha = 0.0;
  std::int64_t shift_samples = 0;
  std::string cir_id;
  double snr_db_target = 0.0;  // +inf means speech only
  std::string speech_path;
  std::string noise_log_ref;
  std::optional<double> ambient_dbfs;
  std::uint64_t ambient_seed = 0;
  double sample_rate = kBasebandRate;
  std::size_t length = 0;

  std::string to_json() const;
  static MixMetadata from_json(const std::string& text);
};

struct Recording {
  Waveform samples;
  MixMetadata truth;
};

struct MixOptions {
  double snr_db = 0.0;
  std::int64_t shift_samples = 0;
  std::optional<double> ambient_dbfs;
  std::uint64_t ambient_seed = 0;
  std::string cir_id;
  std::string speech_path;
  std::string noise_log_ref;
};

// r[t] = s[t] + alpha * n[t - shift] + ambient[t] over the speech's length,
// alpha chosen so the speech/noise RMS ratio over the overlap equals snr_db.
Recording mix_at_snr(const Waveform& speech, const Waveform& noise, const MixOptions& opts);

// Rebuilds the recording bit-exactly from its components and metadata.
Waveform reconstruct(const Waveform& speech, const Waveform& noise, const MixMetadata& truth);

// alpha * n[t - shift] over the speech length (zero outside the noise).
std::vector<double> shifted_noise(std::span<const double> noise, std::size_t length,
                                  std::int64_t shift, double alpha);

// Speech/noise RMS ratio in dB over the overlap, given the truth.
double measured_snr_db(const Waveform& speech, const Waveform& noise, const MixMetadata& truth);

}  // namespace phonemask::channel
