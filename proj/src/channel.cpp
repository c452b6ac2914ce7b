#include "phonemask/channel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include <fmt/format.h>
#include <json.hpp>

#include "phonemask/dsp.hpp"
#include "phonemask/errors.hpp"

namespace phonemask::channel {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::size_t integral_factor(double in_rate, double out_rate) {
  const double f = in_rate / out_rate;
  const double r = std::round(f);
  if (r < 1.0 || std::abs(f - r) > 1e-9)
    throw ContractError(fmt::format("input rate {} Hz is not an integer multiple of {} Hz", in_rate,
                                    out_rate));
  return static_cast<std::size_t>(r);
}

double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

}  // namespace

// ---- microphone nonlinearity ---------------------------------------------------------

void NonlinearityModel::validate(double input_rate) const {
  if (!(a2 >= 0.0)) throw ContractError("a2 must be >= 0");
  if (!std::isfinite(a1)) throw ContractError("a1 must be finite");
  if (!(lowpass_cutoff_hz > 0.0 && lowpass_cutoff_hz < input_rate / 2.0))
    throw ContractError(fmt::format("mic lowpass cutoff {} Hz must lie below the input Nyquist {} Hz",
                                    lowpass_cutoff_hz, input_rate / 2.0));
  integral_factor(input_rate, output_rate);
}

Waveform mic_capture(const Waveform& input, const NonlinearityModel& model) {
  model.validate(input.sample_rate);
  const std::size_t factor = integral_factor(input.sample_rate, model.output_rate);
  const auto& x = input.samples;

  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = model.a1 * x[i] + model.a2 * x[i] * x[i];
  const double dc = mean(y);
  for (double& v : y) v -= dc;

  Waveform out;
  out.sample_rate = model.output_rate;
  if (factor == 1) {
    out.samples = std::move(y);
  } else {
    const double edge = std::min(model.lowpass_cutoff_hz, 0.45 * model.output_rate);
    const auto taps = dsp::design_lowpass(64 * factor + 1, edge / input.sample_rate, 10.0);
    const auto filtered = dsp::filter_aligned(y, taps, taps.size() / 2);
    out.samples.reserve(filtered.size() / factor + 1);
    for (std::size_t i = 0; i < filtered.size(); i += factor) out.samples.push_back(filtered[i]);
  }

  if (model.self_noise) {
    Rng rng(model.noise_seed);
    const double level = db_to_amplitude(model.mic_noise_floor_dbfs);
    for (double& v : out.samples) v += level * rng.normal();
  }
  return out;
}

Waveform inject(const txchain::ModulatedSignal& mod, const NonlinearityModel& model) {
  return mic_capture(Waveform{mod.combined(), mod.sideband.sample_rate}, model);
}

Leakage self_demod_leakage(const txchain::ModulatedSignal& mod, double a2) {
  NonlinearityModel m;
  m.a1 = 0.0;
  m.a2 = a2;
  Leakage out;
  out.audible = mic_capture(mod.sideband, m);
  out.audible_power = dsp::band_power(out.audible.samples, out.audible.sample_rate, 20.0, 16000.0);
  return out;
}

// ---- transducers and arrays ----------------------------------------------------------

double directivity_gain(double theta_deg) { return TransducerModel{}.directivity_db(theta_deg); }

double TransducerModel::directivity_db(double theta_deg) const {
  if (!(std::abs(theta_deg) <= 180.0))
    throw ContractError(fmt::format("angle {} deg outside [-180, 180]", theta_deg));
  const double t = theta_deg / reference_angle_deg;
  return std::max(-drop_at_reference_db * t * t, floor_db);
}

void ArrayLayout::validate() const {
  for (const auto& e : elements)
    if (std::abs(norm(e.orientation) - 1.0) > 1e-9)
      throw ContractError("element orientation must be a unit vector");
}

std::size_t ArrayLayout::count(Group g) const {
  return static_cast<std::size_t>(
      std::count_if(elements.begin(), elements.end(), [g](const Element& e) { return e.group == g; }));
}

ArrayLayout ArrayLayout::single_pair() {
  ArrayLayout a;
  a.elements.push_back({{0.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, Group::Carrier});
  a.elements.push_back({{0.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, Group::Sideband});
  return a;
}

ArrayLayout ArrayLayout::hexagonal(double sphere_radius_m, double tilt_deg) {
  ArrayLayout a;
  const double psi = tilt_deg * kDeg;
  for (int k = 0; k < 6; ++k) {
    const double phi = (30.0 + 60.0 * k) * kDeg;
    const Vec3 dir{std::cos(psi), std::sin(psi) * std::cos(phi), std::sin(psi) * std::sin(phi)};
    Element e;
    e.orientation = dir;
    e.position = {sphere_radius_m * dir[0], sphere_radius_m * dir[1], sphere_radius_m * dir[2]};
    e.group = k % 2 == 0 ? Group::Carrier : Group::Sideband;
    a.elements.push_back(e);
  }
  return a;
}

double FieldPoint::demod_proxy_db() const { return 10.0 * std::log10(std::max(demod_proxy, 1e-300)); }

double FieldPoint::combined_spl() const {
  return 10.0 * std::log10(std::pow(10.0, carrier_spl / 10.0) + std::pow(10.0, sideband_spl / 10.0));
}

FieldPoint field_at_point(const ArrayLayout& array, const Vec3& point, const TransducerModel& tx) {
  const double axial = db_to_amplitude(tx.axial_spl_at_1m);
  double carrier_sq = 0.0, sideband_sq = 0.0;
  for (const auto& e : array.elements) {
    const Vec3 d{point[0] - e.position[0], point[1] - e.position[1], point[2] - e.position[2]};
    const double r = norm(d);
    if (r < kMinElementDistanceM)
      throw ContractError(fmt::format("point ({}, {}, {}) is within {} m of an element", point[0],
                                      point[1], point[2], kMinElementDistanceM));
    const double c = std::clamp(
        (d[0] * e.orientation[0] + d[1] * e.orientation[1] + d[2] * e.orientation[2]) / r, -1.0, 1.0);
    const double theta = std::acos(c) / kDeg;
    const double a = axial * db_to_amplitude(tx.directivity_db(theta)) / r *
                     db_to_amplitude(-tx.absorption_db_per_m * r);
    (e.group == Group::Carrier ? carrier_sq : sideband_sq) += a * a;
  }
  FieldPoint f;
  f.carrier_spl = amplitude_db(std::sqrt(carrier_sq));
  f.sideband_spl = amplitude_db(std::sqrt(sideband_sq));
  f.demod_proxy = std::sqrt(carrier_sq) * std::sqrt(sideband_sq);
  return f;
}

void FieldMap::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write field map {}", path.string()));
  out << "x,y,carrier_spl,sideband_spl,demod_proxy\n";
  for (const auto& s : samples)
    out << fmt::format("{},{},{},{},{}\n", s.x, s.y, s.field.carrier_spl, s.field.sideband_spl,
                       s.field.demod_proxy);
}

FieldMap compute_field_map(const ArrayLayout& array, const TransducerModel& tx, const GridSpec& grid) {
  if (!(grid.step > 0.0 && grid.x_max >= grid.x_min && grid.y_max >= grid.y_min))
    throw ContractError("invalid field-map grid");
  array.validate();
  const auto nx = static_cast<std::size_t>(std::floor((grid.x_max - grid.x_min) / grid.step + 1e-9)) + 1;
  const auto ny = static_cast<std::size_t>(std::floor((grid.y_max - grid.y_min) / grid.step + 1e-9)) + 1;
  FieldMap map;
  for (std::size_t iy = 0; iy < ny; ++iy) {
    for (std::size_t ix = 0; ix < nx; ++ix) {
      const Vec3 p{grid.x_min + grid.step * static_cast<double>(ix),
                   grid.y_min + grid.step * static_cast<double>(iy), grid.z};
      const bool near = std::any_of(array.elements.begin(), array.elements.end(), [&](const Element& e) {
        const Vec3 d{p[0] - e.position[0], p[1] - e.position[1], p[2] - e.position[2]};
        return norm(d) < kMinElementDistanceM;
      });
      if (near) {
        ++map.skipped_near_elements;
        continue;
      }
      map.samples.push_back({p[0], p[1], field_at_point(array, p, tx)});
    }
  }
  return map;
}

std::vector<ExposureViolation> check_exposure(const FieldMap& map, double limit_db_spl) {
  std::vector<ExposureViolation> out;
  for (const auto& s : map.samples) {
    const double spl = s.field.combined_spl();
    if (spl > limit_db_spl) out.push_back({s.x, s.y, spl});
  }
  return out;
}

double demod_beamwidth(const ArrayLayout& array, const TransducerModel& tx, double radius_m,
                       double drop_db, double step_deg) {
  const auto n = static_cast<std::size_t>(std::round(360.0 / step_deg));
  std::vector<double> db(n);
  auto angle = [&](std::size_t i) { return -180.0 + step_deg * static_cast<double>(i); };
  for (std::size_t i = 0; i < n; ++i) {
    const double t = angle(i) * kDeg;
    db[i] = field_at_point(array, {radius_m * std::cos(t), radius_m * std::sin(t), 0.0}, tx)
                .demod_proxy_db();
  }
  const std::size_t best = static_cast<std::size_t>(std::max_element(db.begin(), db.end()) - db.begin());
  const double level = db[best] - drop_db;
  // Walk outwards from the peak (circularly) until the level is crossed,
  // interpolating the crossing linearly.
  auto edge = [&](int dir) {
    std::size_t i = best;
    for (std::size_t steps = 0; steps < n; ++steps) {
      const std::size_t j = dir > 0 ? (i + 1) % n : (i + n - 1) % n;
      if (db[j] < level) {
        const double frac = (db[i] - level) / (db[i] - db[j]);
        return (static_cast<double>(steps) + frac) * step_deg;
      }
      i = j;
    }
    return 180.0;
  };
  return std::min(edge(-1) + edge(+1), 360.0);
}

// ---- room acoustics and mixing ---------------------------------------------------------

Waveform apply_cir(const Waveform& x, const Waveform& cir) {
  if (cir.empty()) throw ContractError("empty impulse response");
  if (std::abs(x.sample_rate - cir.sample_rate) > 1e-9)
    throw ContractError("signal and impulse response rates differ");
  if (cir.duration_s() > 1.0)
    throw ContractError(fmt::format("impulse response is {:.2f} s, longer than 1 s", cir.duration_s()));
  return {dsp::convolve(x.samples, cir.samples), x.sample_rate};
}

Waveform synthetic_cir(const CirOptions& opts, Rng& rng, double sample_rate) {
  const auto n = static_cast<std::size_t>(std::llround(opts.length_s * sample_rate));
  if (n == 0 || opts.direct_delay >= n) throw ContractError("CIR shorter than its direct-path delay");
  if (opts.length_s > 1.0) throw ContractError("CIR longer than 1 s");
  std::vector<double> h(n, 0.0);
  h[opts.direct_delay] = 1.0;
  const double span = static_cast<double>(n - opts.direct_delay);
  double tail_energy = 0.0;
  for (std::size_t t = opts.direct_delay + 1; t < n; ++t) {
    const double decay = db_to_amplitude(-opts.decay_db * static_cast<double>(t - opts.direct_delay) / span);
    h[t] = rng.normal() * decay;
    tail_energy += h[t] * h[t];
  }
  if (tail_energy > 0.0) {
    const double g = std::sqrt(std::pow(10.0, opts.tail_db / 10.0) / tail_energy);
    for (std::size_t t = opts.direct_delay + 1; t < n; ++t) h[t] *= g;
  }
  return {std::move(h), sample_rate};
}

std::vector<NamedCir> load_cir_directory(const std::filesystem::path& dir, double sample_rate) {
  if (!std::filesystem::is_directory(dir))
    throw IngestError(fmt::format("CIR directory {} does not exist", dir.string()));
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (entry.is_regular_file() && ext == ".wav") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IngestError(fmt::format("no .wav impulse responses in {}", dir.string()));
  std::vector<NamedCir> out;
  for (const auto& f : files) {
    auto w = read_wav(f);
    if (w.duration_s() > 1.0)
      throw IngestError(fmt::format("impulse response {} is longer than 1 s", f.string()));
    if (std::abs(w.sample_rate - sample_rate) > 1e-9) w = dsp::resample_to(w, sample_rate);
    out.push_back({f.stem().string(), std::move(w)});
  }
  return out;
}

namespace {

struct Overlap {
  std::size_t begin = 0;
  std::size_t end = 0;
};

Overlap overlap_of(std::size_t speech_len, std::size_t noise_len, std::int64_t shift) {
  const auto lo = std::max<std::int64_t>(0, shift);
  const auto hi = std::min<std::int64_t>(static_cast<std::int64_t>(speech_len),
                                         shift + static_cast<std::int64_t>(noise_len));
  if (hi <= lo) return {};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

double rms_over(std::span<const double> x, Overlap o) {
  return rms(x.subspan(o.begin, o.end - o.begin));
}

}  // namespace

std::vector<double> shifted_noise(std::span<const double> noise, std::size_t length,
                                  std::int64_t shift, double alpha) {
  std::vector<double> out(length, 0.0);
  const auto o = overlap_of(length, noise.size(), shift);
  for (std::size_t t = o.begin; t < o.end; ++t)
    out[t] = alpha * noise[static_cast<std::size_t>(static_cast<std::int64_t>(t) - shift)];
  return out;
}

Waveform reconstruct(const Waveform& speech, const Waveform& noise, const MixMetadata& truth) {
  const std::size_t len = speech.size();
  auto r = shifted_noise(noise.samples, len, truth.shift_samples, truth.alpha);
  for (std::size_t t = 0; t < len; ++t) r[t] += speech.samples[t];
  if (truth.ambient_dbfs) {
    Rng rng(truth.ambient_seed);
    const double level = db_to_amplitude(*truth.ambient_dbfs);
    for (double& v : r) v += level * rng.normal();
  }
  return {std::move(r), speech.sample_rate};
}

Recording mix_at_snr(const Waveform& speech, const Waveform& noise, const MixOptions& opts) {
  if (std::abs(speech.sample_rate - noise.sample_rate) > 1e-9)
    throw ContractError("speech and noise sample rates differ");
  const double rate = speech.sample_rate;
  if (static_cast<double>(std::llabs(opts.shift_samples)) > rate)
    throw ContractError(fmt::format("shift {} exceeds one second ({} samples)", opts.shift_samples, rate));
  const auto o = overlap_of(speech.size(), noise.size(), opts.shift_samples);
  if (static_cast<double>(o.end - o.begin) < rate)
    throw ContractError("speech and shifted noise overlap by less than one second");

  const double rs = rms_over(speech.samples, o);
  if (!(rs > 0.0)) throw ContractError("speech is silent over the overlap");

  MixMetadata truth;
  truth.shift_samples = opts.shift_samples;
  truth.cir_id = opts.cir_id;
  truth.snr_db_target = opts.snr_db;
  truth.speech_path = opts.speech_path;
  truth.noise_log_ref = opts.noise_log_ref;
  truth.ambient_dbfs = opts.ambient_dbfs;
  truth.ambient_seed = opts.ambient_seed;
  truth.sample_rate = rate;
  truth.length = speech.size();

  if (std::isinf(opts.snr_db) && opts.snr_db > 0) {
    truth.alpha = 0.0;
  } else {
    if (!std::isfinite(opts.snr_db)) throw ContractError("snr must be finite or +inf");
    const auto n = shifted_noise(noise.samples, speech.size(), opts.shift_samples, 1.0);
    const double rn = rms_over(n, o);
    if (!(rn > 0.0)) throw ContractError("noise is silent over the overlap");
    truth.alpha = rs / (rn * db_to_amplitude(opts.snr_db));
  }
  return {reconstruct(speech, noise, truth), truth};
}

double measured_snr_db(const Waveform& speech, const Waveform& noise, const MixMetadata& truth) {
  const auto o = overlap_of(speech.size(), noise.size(), truth.shift_samples);
  const auto n = shifted_noise(noise.samples, speech.size(), truth.shift_samples, truth.alpha);
  return 20.0 * std::log10(rms_over(speech.samples, o) / rms_over(n, o));
}

std::string MixMetadata::to_json() const {
  nlohmann::ordered_json j;
  j["alpha"] = alpha;
  j["shift_samples"] = shift_samples;
  j["cir_id"] = cir_id;
  if (std::isinf(snr_db_target))
    j["snr_db_target"] = nullptr;
  else
    j["snr_db_target"] = snr_db_target;
  j["speech_path"] = speech_path;
  j["noise_log_ref"] = noise_log_ref;
  if (ambient_dbfs)
    j["ambient_dbfs"] = *ambient_dbfs;
  else
    j["ambient_dbfs"] = nullptr;
  j["ambient_seed"] = ambient_seed;
  j["sample_rate"] = sample_rate;
  j["length"] = length;
  return j.dump(2);
}

MixMetadata MixMetadata::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    MixMetadata m;
    m.alpha = j.at("alpha").get<double>();
    m.shift_samples = j.at("shift_samples").get<std::int64_t>();
    m.cir_id = j.at("cir_id").get<std::string>();
    m.snr_db_target = j.at("snr_db_target").is_null() ? std::numeric_limits<double>::infinity()
                                                       : j.at("snr_db_target").get<double>();
    m.speech_path = j.at("speech_path").get<std::string>();
    m.noise_log_ref = j.at("noise_log_ref").get<std::string>();
    if (!j.at("ambient_dbfs").is_null()) m.ambient_dbfs = j.at("ambient_dbfs").get<double>();
    m.ambient_seed = j.at("ambient_seed").get<std::uint64_t>();
    m.sample_rate = j.at("sample_rate").get<double>();
    m.length = j.at("length").get<std::size_t>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("mix metadata: {}", e.what()), 0);
  }
}

}  // namespace phonemask::channel
