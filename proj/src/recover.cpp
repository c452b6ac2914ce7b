#include "phonemask/recover.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "phonemask/dsp.hpp"
#include "phonemask/errors.hpp"

namespace phonemask::recover {

std::string_view to_string(ReferenceMode m) {
  return m == ReferenceMode::Raw ? "raw" : "demodulated";
}

ReferenceMode parse_reference_mode(std::string_view text) {
  if (text == "raw") return ReferenceMode::Raw;
  if (text == "demodulated") return ReferenceMode::Demodulated;
  throw ConfigError(fmt::format("unknown reference mode '{}' (expected raw or demodulated)", text));
}

void RecoveryConfig::validate() const {
  if (!(sample_rate > 0.0)) throw ContractError("sample rate must be positive");
  if (!(mu > 0.0 && mu < 2.0)) throw ContractError(fmt::format("step size {} outside (0, 2)", mu));
  if (filter_taps < 1) throw ContractError("filter needs at least one tap");
  if (lead >= filter_taps) throw ContractError("lead must be shorter than the filter");
  if (!(epsilon > 0.0)) throw ContractError("epsilon must be positive");
  if (max_passes < 1) throw ContractError("at least one adaptation pass is needed");
}

// ---- SI-SNR ---------------------------------------------------------------------

double si_snr(std::span<const double> estimate, std::span<const double> reference) {
  if (estimate.size() != reference.size())
    throw ContractError(fmt::format("si_snr needs equal lengths ({} vs {})", estimate.size(),
                                    reference.size()));
  const double ref_energy = energy(reference);
  if (!(ref_energy > 0.0)) throw ContractError("si_snr reference is all zero");
  const double scale = dot(estimate, reference) / ref_energy;
  double target = 0.0, err = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double t = scale * reference[i];
    const double e = estimate[i] - t;
    target += t * t;
    err += e * e;
  }
  constexpr double kCap = 1e-6;  // +60 dB
  return 10.0 * std::log10(std::max(target, 1e-300) / (err + kCap * target + 1e-300));
}

double si_snr(const Waveform& estimate, const Waveform& reference) {
  if (std::abs(estimate.sample_rate - reference.sample_rate) > 1e-9)
    throw ContractError("si_snr inputs have different sample rates");
  if (reference.duration_s() < 1.0) throw ContractError("si_snr needs at least one second of audio");
  return si_snr(estimate.samples, reference.samples);
}

// ---- alignment ----------------------------------------------------------------------

namespace {

struct Energies {
  std::vector<double> prefix;
  explicit Energies(std::span<const double> x) : prefix(x.size() + 1, 0.0) {
    for (std::size_t i = 0; i < x.size(); ++i) prefix[i + 1] = prefix[i] + x[i] * x[i];
  }
  double range(std::int64_t lo, std::int64_t hi) const {
    const auto n = static_cast<std::int64_t>(prefix.size() - 1);
    lo = std::clamp<std::int64_t>(lo, 0, n);
    hi = std::clamp<std::int64_t>(hi, 0, n);
    return hi > lo ? prefix[static_cast<std::size_t>(hi)] - prefix[static_cast<std::size_t>(lo)] : 0.0;
  }
};

double normalise(double c, const Energies& er, const Energies& en, std::int64_t lag) {
  const auto nr = static_cast<std::int64_t>(er.prefix.size() - 1);
  const auto nn = static_cast<std::int64_t>(en.prefix.size() - 1);
  const double a = er.range(std::max<std::int64_t>(0, lag), std::min(nr, nn + lag));
  const double b = en.range(std::max<std::int64_t>(0, -lag), std::min(nn, nr - lag));
  return a > 0.0 && b > 0.0 ? c / std::sqrt(a * b) : 0.0;
}

// Raw correlation sum_t r[t + lag] n[t] for lag in [centre - half, centre + half],
// indexed from the lowest lag.
std::vector<double> correlate_window(std::span<const double> r, std::span<const double> n,
                                     std::int64_t centre, std::size_t half) {
  const auto h = static_cast<std::int64_t>(half);
  const std::int64_t lo = centre - h, hi = centre + h;
  const auto width = static_cast<std::size_t>(hi - lo);
  std::vector<double> out(width + 1, 0.0);
  if (lo >= 0) {
    if (static_cast<std::size_t>(lo) >= r.size()) return out;
    const auto c = dsp::cross_correlate(r.subspan(static_cast<std::size_t>(lo)), n, width);
    std::copy(c.begin() + static_cast<std::ptrdiff_t>(width), c.end(), out.begin());
  } else if (hi <= 0) {
    if (static_cast<std::size_t>(-hi) >= n.size()) return out;
    const auto c = dsp::cross_correlate(r, n.subspan(static_cast<std::size_t>(-hi)), width);
    std::copy(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(width) + 1, out.begin());
  } else {
    const auto span = static_cast<std::size_t>(std::max(-lo, hi));
    const auto c = dsp::cross_correlate(r, n, span);
    const auto first = static_cast<std::ptrdiff_t>(static_cast<std::int64_t>(span) + lo);
    std::copy(c.begin() + first, c.begin() + first + static_cast<std::ptrdiff_t>(width) + 1, out.begin());
  }
  return out;
}

std::vector<double> envelope(std::span<const double> x, std::size_t block) {
  std::vector<double> e((x.size() + block - 1) / block, 0.0);
  for (std::size_t b = 0; b < e.size(); ++b) {
    const std::size_t lo = b * block, hi = std::min(x.size(), lo + block);
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += x[i] * x[i];
    e[b] = std::sqrt(acc / static_cast<double>(hi - lo));
  }
  const double m = mean(e);
  for (double& v : e) v -= m;
  return e;
}

constexpr std::size_t kCoarseCandidates = 5;
constexpr std::size_t kRefineHalfWidth = 256;

}  // namespace

double ncc_at(std::span<const double> recording, std::span<const double> reference,
              std::int64_t lag) {
  const Energies er(recording), en(reference);
  double c = 0.0;
  for (std::size_t t = 0; t < reference.size(); ++t) {
    const auto i = static_cast<std::int64_t>(t) + lag;
    if (i >= 0 && i < static_cast<std::int64_t>(recording.size()))
      c += recording[static_cast<std::size_t>(i)] * reference[t];
  }
  return normalise(c, er, en, lag);
}

Alignment align(std::span<const double> recording, std::span<const double> reference,
                const RecoveryConfig& cfg) {
  if (recording.empty() || reference.empty())
    throw AlignmentError("cannot align an empty recording or reference");
  const auto max_shift = static_cast<std::int64_t>(cfg.max_shift);
  const auto block = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.sample_rate / 1000.0)));

  // Coarse: 1 ms energy envelopes.
  const auto er_env = envelope(recording, block);
  const auto en_env = envelope(reference, block);
  const std::size_t coarse_lags = cfg.max_shift / block + 1;
  const auto coarse = dsp::cross_correlate(er_env, en_env, coarse_lags);
  std::vector<std::size_t> order(coarse.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return coarse[a] != coarse[b] ? coarse[a] > coarse[b] : a < b;
  });
  std::vector<std::int64_t> centres;
  for (auto idx : order) {
    const auto lag_blocks = static_cast<std::int64_t>(idx) - static_cast<std::int64_t>(coarse_lags);
    const bool distinct = std::none_of(centres.begin(), centres.end(), [&](std::int64_t c) {
      return std::llabs(c - lag_blocks * static_cast<std::int64_t>(block)) <
             static_cast<std::int64_t>(kRefineHalfWidth);
    });
    if (distinct) centres.push_back(lag_blocks * static_cast<std::int64_t>(block));
    if (centres.size() == kCoarseCandidates) break;
  }

  // Fine: full-rate normalised correlation around each candidate.
  const Energies er(recording), en(reference);
  Alignment best;
  bool found = false;
  for (const auto centre : centres) {
    const auto raw = correlate_window(recording, reference, centre, kRefineHalfWidth);
    for (std::size_t j = 0; j < raw.size(); ++j) {
      const std::int64_t lag = centre + static_cast<std::int64_t>(j) -
                               static_cast<std::int64_t>(kRefineHalfWidth);
      if (std::llabs(lag) > max_shift) continue;
      const double v = normalise(raw[j], er, en, lag);
      const bool better = !found || v > best.peak + 1e-12 ||
                          (std::abs(v - best.peak) <= 1e-12 && std::llabs(lag) < std::llabs(best.lag));
      if (better) {
        best = {lag, v};
        found = true;
      }
    }
  }
  if (!found || best.peak < cfg.peak_floor)
    throw AlignmentError(fmt::format(
        "noise reference does not match the recording (correlation peak {:.3f} below {:.3f}); "
        "check that the noise log belongs to this recording",
        found ? best.peak : 0.0, cfg.peak_floor));
  return best;
}

// ---- channel estimation -----------------------------------------------------------------

std::vector<double> aligned_reference(std::span<const double> reference, std::size_t length,
                                      std::int64_t start) {
  std::vector<double> out(length, 0.0);
  for (std::size_t t = 0; t < length; ++t) {
    const auto i = static_cast<std::int64_t>(t) - start;
    if (i >= 0 && i < static_cast<std::int64_t>(reference.size()))
      out[t] = reference[static_cast<std::size_t>(i)];
  }
  return out;
}

namespace {
constexpr double kResidualFloorDb = -60.0;
}  // namespace

ChannelEstimate estimate_channel(std::span<const double> recording,
                                 std::span<const double> aligned_ref, const RecoveryConfig& cfg) {
  cfg.validate();
  const std::size_t m = cfg.filter_taps;
  const std::size_t n = 2 * m;
  const std::size_t len = recording.size();
  if (len == 0) throw ContractError("empty recording");
  const auto& plan = dsp::fft(n);
  const std::size_t blocks = (len + m - 1) / m;
  auto ref_at = [&](std::int64_t i) {
    return i >= 0 && i < static_cast<std::int64_t>(aligned_ref.size())
               ? aligned_ref[static_cast<std::size_t>(i)]
               : 0.0;
  };

  std::vector<double> w(n, 0.0);  // time-domain weights, second half kept at zero
  std::vector<dsp::Complex> W(plan.bins(), 0.0), X, E, G;
  std::vector<double> power;
  std::vector<double> xbuf(n), ebuf(n, 0.0), y, g;
  std::vector<double> w_mean(m, 0.0);
  constexpr double kPowerSmoothing = 0.9;

  ChannelEstimate est;
  double prev_residual = -1.0;
  std::size_t growing = 0;
  for (std::size_t pass = 1; pass <= cfg.max_passes; ++pass) {
    std::fill(w_mean.begin(), w_mean.end(), 0.0);
    double residual = 0.0;
    for (std::size_t b = 0; b < blocks; ++b) {
      const auto base = static_cast<std::int64_t>(b * m);
      for (std::size_t i = 0; i < n; ++i)
        xbuf[i] = ref_at(base - static_cast<std::int64_t>(m) + static_cast<std::int64_t>(i));
      plan.forward(xbuf, X);
      std::vector<dsp::Complex> Y(X.size());
      for (std::size_t k = 0; k < X.size(); ++k) Y[k] = X[k] * W[k];
      plan.inverse(Y, y);

      std::fill(ebuf.begin(), ebuf.begin() + static_cast<std::ptrdiff_t>(m), 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t t = b * m + i;
        const double e = t < len ? recording[t] - y[m + i] : 0.0;
        ebuf[m + i] = e;
        residual += e * e;
      }
      plan.forward(ebuf, E);

      if (power.empty()) {
        power.resize(X.size());
        for (std::size_t k = 0; k < X.size(); ++k) power[k] = std::norm(X[k]);
      } else {
        for (std::size_t k = 0; k < X.size(); ++k)
          power[k] = kPowerSmoothing * power[k] + (1.0 - kPowerSmoothing) * std::norm(X[k]);
      }
      const double reg = cfg.epsilon * (mean(power) + 1e-30) + 1e-30;
      G.resize(X.size());
      for (std::size_t k = 0; k < X.size(); ++k) G[k] = std::conj(X[k]) * E[k] / (power[k] + reg);
      plan.inverse(G, g);
      for (std::size_t i = 0; i < m; ++i) {
        w[i] += cfg.mu * g[i];
        w_mean[i] += w[i];
      }
      plan.forward(w, W);
    }
    residual /= static_cast<double>(len);
    est.passes = pass;
    if (!std::isfinite(residual))
      throw EstimationError(fmt::format("adaptive filter diverged; try a smaller step size than {}", cfg.mu));
    if (10.0 * std::log10((residual * static_cast<double>(len) + 1e-300) / (energy(recording) + 1e-300)) <=
        kResidualFloorDb) {
      est.converged = true;
      break;
    }
    if (prev_residual >= 0.0) {
      const double change_db = 10.0 * std::log10((residual + 1e-300) / (prev_residual + 1e-300));
      if (std::abs(change_db) < cfg.convergence_db) {
        est.converged = true;
        break;
      }
      growing = change_db > cfg.convergence_db ? growing + 1 : 0;
      if (growing >= 3)
        throw EstimationError(fmt::format(
            "residual grew for three passes in a row; try a smaller step size than {}", cfg.mu));
    }
    prev_residual = residual;
  }

  est.taps.resize(m);
  for (std::size_t i = 0; i < m; ++i) est.taps[i] = w_mean[i] / static_cast<double>(blocks);
  auto fit = dsp::convolve(aligned_ref.first(std::min(aligned_ref.size(), len)), est.taps);
  double res = 0.0;
  for (std::size_t t = 0; t < len; ++t) {
    const double e = recording[t] - (t < fit.size() ? fit[t] : 0.0);
    res += e * e;
  }
  est.residual_db = 10.0 * std::log10((res + 1e-300) / (energy(recording) + 1e-300));
  return est;
}

// ---- cancellation ----------------------------------------------------------------------

CancelResult cancel(const Waveform& recording, const Waveform& reference, const RecoveryConfig& cfg) {
  cfg.validate();
  if (std::abs(recording.sample_rate - reference.sample_rate) > 1e-9)
    throw ContractError("recording and reference sample rates differ");
  CancelResult out;
  Alignment a;
  try {
    a = align(recording.samples, reference.samples, cfg);
  } catch (const AlignmentError&) {
    out.recovered = recording;
    out.flag = "alignment_failed";
    return out;
  }
  out.aligned = true;
  out.lag = a.lag;
  out.peak = a.peak;

  const std::size_t len = recording.size();
  const auto ref = aligned_reference(reference.samples, len,
                                     a.lag - static_cast<std::int64_t>(cfg.lead));
  const auto est = estimate_channel(recording.samples, ref, cfg);
  out.converged = est.converged;
  const auto fit = dsp::convolve(ref, est.taps);
  out.recovered.sample_rate = recording.sample_rate;
  out.recovered.samples.resize(len);
  for (std::size_t t = 0; t < len; ++t) out.recovered.samples[t] = recording.samples[t] - fit[t];
  return out;
}

Waveform make_reference(const Waveform& noise, ReferenceMode mode,
                        const txchain::ModulationOptions& mod,
                        const channel::NonlinearityModel& mic, double ultrasonic_rate) {
  if (mode == ReferenceMode::Raw) return noise;
  const auto ultra = txchain::to_ultrasonic(noise, ultrasonic_rate);
  auto model = mic;
  model.self_noise = false;
  auto demod = channel::inject(txchain::modulate(ultra, mod), model);
  demod.samples.resize(noise.size(), 0.0);
  return demod;
}

std::string RecoveryReport::to_json_line() const {
  nlohmann::ordered_json j;
  j["lag"] = lag;
  j["aligned"] = aligned;
  j["converged"] = converged;
  j["si_snr_before"] = si_snr_before;
  j["si_snr_after"] = si_snr_after;
  return j.dump();
}

}  // namespace phonemask::recover
