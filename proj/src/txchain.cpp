#include "phonemask/txchain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

#include "phonemask/dsp.hpp"
#include "phonemask/errors.hpp"

namespace phonemask::txchain {

std::string_view to_string(Scheme s) {
  switch (s) {
    case Scheme::DSB: return "DSB";
    case Scheme::LSB: return "LSB";
    case Scheme::USB: return "USB";
  }
  return "?";
}

Scheme parse_scheme(std::string_view text) {
  std::string up(text);
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
  if (up == "DSB") return Scheme::DSB;
  if (up == "LSB") return Scheme::LSB;
  if (up == "USB") return Scheme::USB;
  throw ConfigError(fmt::format("unknown modulation scheme '{}' (expected DSB, LSB or USB)", text));
}

std::vector<double> hilbert(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 2) return std::vector<double>(n, 0.0);
  const auto& plan = dsp::fft(n);
  auto spec = plan.forward(x);
  spec[0] = 0.0;
  if (n % 2 == 0) spec.back() = 0.0;
  for (std::size_t k = 1; k < spec.size(); ++k) {
    if (n % 2 == 0 && k == spec.size() - 1) break;
    spec[k] = dsp::Complex(spec[k].imag(), -spec[k].real());
  }
  return plan.inverse(spec);
}

std::vector<double> cosine_tone(std::size_t n, double freq_hz, double sample_rate,
                                double amplitude) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double cycles = std::fmod(freq_hz * static_cast<double>(i), sample_rate) / sample_rate;
    out[i] = amplitude * std::cos(2.0 * std::numbers::pi * cycles);
  }
  return out;
}

std::vector<double> ModulatedSignal::carrier() const {
  if (!includes_carrier) return std::vector<double>(sideband.size(), 0.0);
  return cosine_tone(sideband.size(), carrier_hz, sideband.sample_rate, carrier_amplitude);
}

std::vector<double> ModulatedSignal::combined() const {
  auto out = carrier();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += sideband.samples[i];
  return out;
}

Waveform to_ultrasonic(const Waveform& baseband, double ultrasonic_rate) {
  return dsp::resample_to(baseband, ultrasonic_rate);
}

ModulatedSignal modulate(const Waveform& n, double carrier_hz, Scheme scheme) {
  ModulationOptions opts;
  opts.carrier_hz = carrier_hz;
  opts.scheme = scheme;
  opts.include_carrier = false;
  return modulate(n, opts);
}

ModulatedSignal modulate(const Waveform& n, const ModulationOptions& opts) {
  const double rate = n.sample_rate;
  if (!(opts.carrier_hz > opts.bandwidth_hz))
    throw ContractError(fmt::format("carrier {} Hz must exceed the baseband bandwidth {} Hz",
                                    opts.carrier_hz, opts.bandwidth_hz));
  if (!(opts.carrier_hz + opts.bandwidth_hz < rate / 2.0))
    throw ContractError(fmt::format(
        "carrier {} Hz + bandwidth {} Hz exceeds the Nyquist limit {} Hz of a {} Hz signal; "
        "upsample the noise first",
        opts.carrier_hz, opts.bandwidth_hz, rate / 2.0, rate));
  if (!(opts.carrier_ratio >= 0.0)) throw ContractError("carrier ratio must be >= 0");

  const std::size_t len = n.size();
  const auto c = cosine_tone(len, opts.carrier_hz, rate);
  std::vector<double> s(len);
  for (std::size_t i = 0; i < len; ++i) {
    const double cycles = std::fmod(opts.carrier_hz * static_cast<double>(i), rate) / rate;
    s[i] = std::sin(2.0 * std::numbers::pi * cycles);
  }

  ModulatedSignal out;
  out.carrier_hz = opts.carrier_hz;
  out.scheme = opts.scheme;
  out.sideband.sample_rate = rate;
  out.sideband.samples.resize(len);
  auto& y = out.sideband.samples;
  if (opts.scheme == Scheme::DSB) {
    for (std::size_t i = 0; i < len; ++i) y[i] = std::numbers::sqrt2 * n.samples[i] * c[i];
  } else {
    const auto h = hilbert(n.samples);
    const double sign = opts.scheme == Scheme::LSB ? 1.0 : -1.0;
    for (std::size_t i = 0; i < len; ++i) y[i] = n.samples[i] * c[i] + sign * h[i] * s[i];
  }
  out.includes_carrier = opts.include_carrier;
  out.carrier_amplitude = opts.include_carrier ? opts.carrier_ratio * peak(y) : 0.0;
  return out;
}

// ---- frequency responses ------------------------------------------------------------

void FrequencyResponse::validate() const {
  if (grid_hz.empty() || grid_hz.size() != gain_db.size())
    throw ContractError("frequency response needs matching, non-empty grid and gain columns");
  for (std::size_t i = 0; i < grid_hz.size(); ++i) {
    if (!std::isfinite(grid_hz[i]) || !std::isfinite(gain_db[i]))
      throw ContractError(fmt::format("frequency response entry {} is not finite", i));
    if (i > 0 && !(grid_hz[i] > grid_hz[i - 1]))
      throw ContractError(fmt::format("frequency grid not ascending at entry {}", i));
  }
}

double FrequencyResponse::gain_db_at(double f) const {
  if (f <= grid_hz.front()) return gain_db.front();
  if (f >= grid_hz.back()) return gain_db.back();
  const auto it = std::upper_bound(grid_hz.begin(), grid_hz.end(), f);
  const std::size_t hi = static_cast<std::size_t>(it - grid_hz.begin());
  const std::size_t lo = hi - 1;
  const double t = (f - grid_hz[lo]) / (grid_hz[hi] - grid_hz[lo]);
  return gain_db[lo] + t * (gain_db[hi] - gain_db[lo]);
}

bool FrequencyResponse::covers(double lo_hz, double hi_hz) const {
  return !grid_hz.empty() && grid_hz.front() <= lo_hz && grid_hz.back() >= hi_hz;
}

FrequencyResponse FrequencyResponse::flat(double lo_hz, double hi_hz) {
  return {{lo_hz, hi_hz}, {0.0, 0.0}};
}

FrequencyResponse FrequencyResponse::tilt(double db_per_octave, double ref_hz, double lo_hz,
                                          double hi_hz, std::size_t points) {
  if (!(lo_hz > 0.0 && hi_hz > lo_hz && points >= 2))
    throw ContractError("tilt response needs 0 < lo < hi and at least two points");
  FrequencyResponse fr;
  for (std::size_t i = 0; i < points; ++i) {
    const double f =
        lo_hz * std::pow(hi_hz / lo_hz, static_cast<double>(i) / static_cast<double>(points - 1));
    fr.grid_hz.push_back(f);
    fr.gain_db.push_back(db_per_octave * std::log2(f / ref_hz));
  }
  return fr;
}

FrequencyResponse FrequencyResponse::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError(fmt::format("cannot open frequency response {}", path.string()));
  FrequencyResponse fr;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    double f = 0.0, g = 0.0;
    if (!(ss >> f)) continue;
    std::string extra;
    if (!(ss >> g) || (ss >> extra))
      throw ParseError(fmt::format("{}: expected `freq_hz gain_db`", path.string()), lineno);
    fr.grid_hz.push_back(f);
    fr.gain_db.push_back(g);
  }
  try {
    fr.validate();
  } catch (const ContractError& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()), lineno);
  }
  return fr;
}

void FrequencyResponse::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << "# freq_hz gain_db\n";
  for (std::size_t i = 0; i < grid_hz.size(); ++i)
    out << fmt::format("{} {}\n", grid_hz[i], gain_db[i]);
}

// ---- pre-compensation --------------------------------------------------------------

double CompensationFilter::gain_db_at(double freq_hz) const {
  return amplitude_db(std::abs(dsp::fir_response(fir_taps, freq_hz, sample_rate)));
}

CompensationFilter CompensationFilter::identity(double sample_rate) {
  CompensationFilter f;
  f.fir_taps = {1.0};
  f.sample_rate = sample_rate;
  return f;
}

double precomp_target_db(const FrequencyResponse& fr_equiv, const FrequencyResponse& fr_rx,
                         const PrecompOptions& opts, double f) {
  auto in_band = [&](double x) {
    return std::min(fr_rx.gain_db_at(x) - fr_equiv.gain_db_at(x), opts.max_boost_db);
  };
  if (f >= opts.band_lo_hz && f <= opts.band_hi_hz) return in_band(f);
  if (f < opts.band_lo_hz) return in_band(opts.band_lo_hz) * f / opts.band_lo_hz;
  const double over = (f - opts.band_hi_hz) / opts.upper_transition_hz;
  return over >= 1.0 ? 0.0 : in_band(opts.band_hi_hz) * (1.0 - over);
}

CompensationFilter design_precompensation(const FrequencyResponse& fr_equiv,
                                          const FrequencyResponse& fr_rx,
                                          const PrecompOptions& opts) {
  fr_equiv.validate();
  fr_rx.validate();
  for (const auto* fr : {&fr_equiv, &fr_rx})
    if (!fr->covers(opts.band_lo_hz, opts.band_hi_hz))
      throw ContractError(fmt::format("frequency response must cover [{}, {}] Hz",
                                      opts.band_lo_hz, opts.band_hi_hz));
  if (opts.num_taps % 2 == 0) throw ContractError("compensation filter length must be odd");
  if (!(opts.band_hi_hz + opts.upper_transition_hz < opts.sample_rate / 2.0))
    throw ContractError("compensation band exceeds Nyquist");

  CompensationFilter out;
  out.sample_rate = opts.sample_rate;
  out.band_lo_hz = opts.band_lo_hz;
  out.band_hi_hz = opts.band_hi_hz;

  double worst = -1e300, worst_f = 0.0;
  for (double f = opts.band_lo_hz; f <= opts.band_hi_hz; f += 5.0) {
    const double req = fr_rx.gain_db_at(f) - fr_equiv.gain_db_at(f);
    if (req > worst) {
      worst = req;
      worst_f = f;
    }
  }
  if (worst > opts.max_boost_db)
    out.warnings.push_back(fmt::format("requested boost {:.1f} dB at {:.0f} Hz clamped to {:.1f} dB",
                                       worst, worst_f, opts.max_boost_db));

  out.fir_taps = dsp::design_from_response(
      [&](double f) { return db_to_amplitude(precomp_target_db(fr_equiv, fr_rx, opts, f)); },
      opts.num_taps, opts.sample_rate);
  return out;
}

Waveform equalize(const Waveform& w, const CompensationFilter& filter) {
  if (std::abs(w.sample_rate - filter.sample_rate) > 1e-9)
    throw ContractError(fmt::format("filter designed for {} Hz applied to a {} Hz signal",
                                    filter.sample_rate, w.sample_rate));
  return {dsp::filter_aligned(w.samples, filter.fir_taps, filter.delay()), w.sample_rate};
}

synth::JammingNoise equalize(const synth::JammingNoise& noise, const CompensationFilter& filter) {
  synth::JammingNoise out = noise;
  out.waveform = equalize(noise.waveform, filter);
  return out;
}

}  // namespace phonemask::txchain
