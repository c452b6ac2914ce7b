#include "phonemask/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

#include "phonemask/dsp.hpp"
#include "phonemask/errors.hpp"

namespace phonemask::augment {

namespace {

void check_range(double factor, Range bounds, std::string_view what) {
  if (!std::isfinite(factor) || !bounds.contains(factor))
    throw ContractError(fmt::format("{} factor {} outside [{}, {}]", what, factor, bounds.lo,
                                    bounds.hi));
}

void check_config_range(Range r, Range bounds, std::string_view what) {
  if (!(r.lo <= r.hi) || !bounds.contains(r.lo) || !bounds.contains(r.hi))
    throw ContractError(fmt::format("{} range [{}, {}] must lie within [{}, {}]", what, r.lo, r.hi,
                                    bounds.lo, bounds.hi));
}

}  // namespace

void AugmentConfig::validate() const {
  check_config_range(speed_range, kSpeedBounds, "speed");
  check_config_range(f0_mean_range, kF0MeanBounds, "F0 mean");
  check_config_range(f0_contour_range, kF0ContourBounds, "F0 contour");
  check_config_range(energy_range, kEnergyBounds, "energy");
  if (!(apply_probability >= 0.0 && apply_probability <= 1.0))
    throw ContractError(fmt::format("augmentation probability {} outside [0, 1]",
                                    apply_probability));
}

// ---- pitch ------------------------------------------------------------------

std::vector<PitchFrame> track_pitch(std::span<const double> x, double sample_rate,
                                    const PitchTrackOptions& opts) {
  const auto win = static_cast<std::size_t>(std::lround(opts.window_s * sample_rate));
  const auto hop = static_cast<std::size_t>(std::lround(opts.hop_s * sample_rate));
  const auto min_lag = static_cast<std::size_t>(std::floor(sample_rate / opts.max_f0_hz));
  const auto max_lag = static_cast<std::size_t>(std::ceil(sample_rate / opts.min_f0_hz));
  const std::size_t span = win + max_lag + 1;
  std::vector<PitchFrame> frames;
  if (x.size() < span || hop == 0) return frames;

  const auto& plan = dsp::fft(dsp::next_pow2(span));
  std::vector<double> prefix(x.size() + 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) prefix[i + 1] = prefix[i] + x[i] * x[i];

  std::vector<dsp::Complex> head_spec, seg_spec;
  std::vector<double> diff(max_lag + 1), cmnd(max_lag + 1), r;
  for (std::size_t start = 0; start + span <= x.size(); start += hop) {
    PitchFrame f;
    f.time_s = (static_cast<double>(start) + 0.5 * static_cast<double>(span)) / sample_rate;
    const double e0 = prefix[start + win] - prefix[start];
    if (e0 / static_cast<double>(win) < 1e-10) {
      frames.push_back(f);
      continue;
    }
    plan.forward(x.subspan(start, win), head_spec);
    plan.forward(x.subspan(start, span), seg_spec);
    for (std::size_t k = 0; k < seg_spec.size(); ++k) seg_spec[k] *= std::conj(head_spec[k]);
    plan.inverse(seg_spec, r);

    diff[0] = 0.0;
    cmnd[0] = 1.0;
    double running = 0.0;
    for (std::size_t tau = 1; tau <= max_lag; ++tau) {
      const double et = prefix[start + tau + win] - prefix[start + tau];
      diff[tau] = std::max(0.0, e0 + et - 2.0 * r[tau]);
      running += diff[tau];
      cmnd[tau] = running > 0.0 ? diff[tau] * static_cast<double>(tau) / running : 1.0;
    }

    std::size_t best = 0;
    for (std::size_t tau = min_lag; tau <= max_lag; ++tau) {
      if (cmnd[tau] < opts.yin_threshold) {
        while (tau + 1 <= max_lag && cmnd[tau + 1] < cmnd[tau]) ++tau;
        best = tau;
        break;
      }
    }
    if (best == 0) {
      best = min_lag;
      for (std::size_t tau = min_lag; tau <= max_lag; ++tau)
        if (cmnd[tau] < cmnd[best]) best = tau;
    }

    const double eb = prefix[start + best + win] - prefix[start + best];
    f.periodicity = eb > 0.0 ? r[best] / std::sqrt(e0 * eb) : 0.0;
    double lag = static_cast<double>(best);
    if (best > min_lag && best < max_lag) {
      const double a = cmnd[best - 1], b = cmnd[best], c = cmnd[best + 1];
      const double denom = a - 2.0 * b + c;
      if (denom > 0.0) lag += 0.5 * (a - c) / denom;
    }
    f.voiced = f.periodicity >= opts.voicing_threshold;
    f.f0_hz = f.voiced ? sample_rate / lag : 0.0;
    frames.push_back(f);
  }
  return frames;
}

double median_f0(const std::vector<PitchFrame>& track) {
  std::vector<double> v;
  for (const auto& f : track)
    if (f.voiced) v.push_back(f.f0_hz);
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double mean_f0(const std::vector<PitchFrame>& track) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& f : track)
    if (f.voiced) {
      sum += f.f0_hz;
      ++n;
    }
  return n ? sum / static_cast<double>(n) : 0.0;
}

bool is_voiced(const std::vector<PitchFrame>& track) {
  const auto voiced = static_cast<std::size_t>(
      std::count_if(track.begin(), track.end(), [](const auto& f) { return f.voiced; }));
  return voiced >= 2 && 2 * voiced >= track.size();
}

// ---- WSOLA --------------------------------------------------------------------

std::vector<double> time_stretch(std::span<const double> x, double speed, double sample_rate) {
  if (!(speed > 0.0) || !std::isfinite(speed))
    throw ContractError(fmt::format("time-stretch speed {} must be positive", speed));
  const auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(x.size()) / speed));
  if (x.empty() || out_len == 0) return std::vector<double>(out_len, 0.0);

  const auto hs = static_cast<std::size_t>(std::max<long>(8, std::lround(0.010 * sample_rate)));
  const std::size_t w = 2 * hs;
  const std::size_t tol = hs / 2;
  const auto window = dsp::hann_window(w, true);

  const std::size_t frames = (out_len + hs) / hs + 1;
  const std::size_t front = w;
  const std::size_t needed =
      front + static_cast<std::size_t>(std::ceil(static_cast<double>(frames * hs) * speed)) + w +
      2 * tol + hs;
  std::vector<double> xp(std::max(needed, front + x.size() + w), 0.0);
  std::copy(x.begin(), x.end(), xp.begin() + static_cast<std::ptrdiff_t>(front));

  std::vector<double> prefix(xp.size() + 1, 0.0);
  for (std::size_t i = 0; i < xp.size(); ++i) prefix[i + 1] = prefix[i] + xp[i] * xp[i];

  std::vector<double> y(frames * hs + w, 0.0), wsum(frames * hs + w, 0.0);
  std::size_t prev = 0;
  for (std::size_t k = 0; k < frames; ++k) {
    // Output frame k is centred on output sample k*hs (padded by hs).
    const double centre = static_cast<double>(k * hs) * speed;
    const auto nominal = static_cast<std::size_t>(
        std::llround(centre + static_cast<double>(front) - static_cast<double>(hs)));
    std::size_t chosen = nominal;
    if (k > 0) {
      const std::size_t natural = prev + hs;
      const std::size_t lo = nominal - tol;
      const std::span<const double> templ(xp.data() + natural, w);
      const double te = prefix[natural + w] - prefix[natural];
      if (te > 1e-12) {
        const std::span<const double> region(xp.data() + lo, w + 2 * tol);
        const auto c = dsp::cross_correlate(region, templ, 2 * tol);
        double best = -2.0;
        for (std::size_t d = 0; d <= 2 * tol; ++d) {
          const double ce = prefix[lo + d + w] - prefix[lo + d];
          if (ce <= 1e-12) continue;
          const double score = c[2 * tol + d] / std::sqrt(ce * te);
          // Prefer the smallest offset from nominal on ties.
          const auto off = static_cast<long>(d) - static_cast<long>(tol);
          const auto best_off = static_cast<long>(chosen) - static_cast<long>(nominal);
          if (score > best + 1e-12 || (std::abs(score - best) <= 1e-12 && std::abs(off) < std::abs(best_off))) {
            best = score;
            chosen = lo + d;
          }
        }
      }
    }
    const std::size_t out_pos = k * hs;
    for (std::size_t i = 0; i < w; ++i) {
      y[out_pos + i] += window[i] * xp[chosen + i];
      wsum[out_pos + i] += window[i];
    }
    prev = chosen;
  }

  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double ws = wsum[i + hs];
    out[i] = ws > 1e-6 ? y[i + hs] / ws : 0.0;
  }
  return out;
}

// ---- PSOLA --------------------------------------------------------------------

namespace {

struct PitchContour {
  std::vector<PitchFrame> frames;
  double rate = 0.0;

  // F0 at sample t from the nearest frame (0 when unvoiced).
  double f0_at(double t) const {
    if (frames.empty()) return 0.0;
    const double ts = t / rate;
    const auto it = std::lower_bound(frames.begin(), frames.end(), ts,
                                     [](const PitchFrame& f, double v) { return f.time_s < v; });
    if (it == frames.begin()) return it->f0_hz;
    if (it == frames.end()) return frames.back().f0_hz;
    const auto& a = *(it - 1);
    const auto& b = *it;
    if (a.voiced && b.voiced) {
      const double u = (ts - a.time_s) / (b.time_s - a.time_s);
      return a.f0_hz + u * (b.f0_hz - a.f0_hz);
    }
    return (ts - a.time_s < b.time_s - ts) ? a.f0_hz : b.f0_hz;
  }
};

template <typename Ratio>
std::vector<double> psola(std::span<const double> x, const PitchContour& contour, Ratio ratio) {
  const double rate = contour.rate;
  const double unvoiced_period = 0.010 * rate;
  const auto n = static_cast<double>(x.size());

  std::vector<double> marks, periods;
  for (double t = 0.0; t < n;) {
    const double f0 = contour.f0_at(t);
    const double period = f0 > 0.0 ? rate / f0 : unvoiced_period;
    marks.push_back(t);
    periods.push_back(period);
    t += period;
  }

  std::vector<double> y(x.size(), 0.0), wsum(x.size(), 0.0);
  std::size_t k = 0;
  for (double s = 0.0; s < n;) {
    while (k + 1 < marks.size() && std::abs(marks[k + 1] - s) <= std::abs(marks[k] - s)) ++k;
    const double ta = marks[k];
    const double period = periods[k];
    const double f0 = contour.f0_at(ta);
    const double beta = f0 > 0.0 ? ratio(f0) : 1.0;
    // Hann grain of two analysis periods, centred on the mark.
    const auto half = static_cast<long>(std::ceil(period));
    const auto shift = static_cast<long>(std::lround(s - ta));
    for (long i = -half; i <= half; ++i) {
      const long src = static_cast<long>(std::lround(ta)) + i;
      const long dst = src + shift;
      if (src < 0 || dst < 0 || src >= static_cast<long>(x.size()) || dst >= static_cast<long>(x.size()))
        continue;
      const double wgt = 0.5 + 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / period);
      if (wgt <= 0.0) continue;
      y[static_cast<std::size_t>(dst)] += wgt * x[static_cast<std::size_t>(src)];
      wsum[static_cast<std::size_t>(dst)] += wgt;
    }
    s += period / beta;
  }
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = wsum[i] > 1e-3 ? y[i] / wsum[i] : x[i];
  return y;
}

PitchContour contour_of(const PhonemeClip& clip) {
  return {track_pitch(clip.samples, clip.sample_rate), clip.sample_rate};
}

}  // namespace

// ---- transforms -----------------------------------------------------------------

PhonemeClip change_speed(const PhonemeClip& clip, double factor) {
  check_range(factor, kSpeedBounds, "speed");
  PhonemeClip out = clip;
  if (factor != 1.0) out.samples = time_stretch(clip.samples, factor, clip.sample_rate);
  return out;
}

PitchEdit shift_f0_mean(const PhonemeClip& clip, double factor) {
  check_range(factor, kF0MeanBounds, "F0 mean");
  const auto contour = contour_of(clip);
  if (!is_voiced(contour.frames)) return {clip, true};
  if (factor == 1.0) return {clip, false};
  PhonemeClip out = clip;
  out.samples = psola(clip.samples, contour, [factor](double) { return factor; });
  return {std::move(out), false};
}

PitchEdit warp_f0_contour(const PhonemeClip& clip, double factor) {
  check_range(factor, kF0ContourBounds, "F0 contour");
  const auto contour = contour_of(clip);
  if (!is_voiced(contour.frames)) return {clip, true};
  if (factor == 1.0) return {clip, false};
  const double centre = mean_f0(contour.frames);
  PhonemeClip out = clip;
  out.samples = psola(clip.samples, contour, [factor, centre](double f0) {
    return (factor * (f0 - centre) + centre) / f0;
  });
  return {std::move(out), false};
}

PhonemeClip scale_energy(const PhonemeClip& clip, double factor) {
  check_range(factor, kEnergyBounds, "energy");
  PhonemeClip out = clip;
  if (factor != 1.0)
    for (double& v : out.samples) v *= factor;
  return out;
}

PhonemeClip reverse(const PhonemeClip& clip) {
  PhonemeClip out = clip;
  std::reverse(out.samples.begin(), out.samples.end());
  return out;
}

std::string_view to_string(Transform t) {
  switch (t) {
    case Transform::Speed: return "speed";
    case Transform::F0Mean: return "f0_mean";
    case Transform::F0Contour: return "f0_contour";
    case Transform::Energy: return "energy";
    case Transform::Reverse: return "reverse";
  }
  return "?";
}

AugmentResult augment(const PhonemeClip& clip, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  const double p = cfg.apply_probability;
  const Range ranges[] = {cfg.speed_range, cfg.f0_mean_range, cfg.f0_contour_range,
                          cfg.energy_range, Range{1.0, 1.0}};
  AugmentResult res;
  for (std::size_t i = 0; i < kTransformCount; ++i) {
    const double u = rng.uniform();
    const double v = rng.uniform();
    res.fired[i] = u < p;
    res.factors[i] = ranges[i].lo + (ranges[i].hi - ranges[i].lo) * v;
  }
  res.clip = clip;
  if (res.fired[0]) res.clip = change_speed(res.clip, res.factors[0]);
  if (res.fired[1]) res.clip = shift_f0_mean(res.clip, res.factors[1]).clip;
  if (res.fired[2]) res.clip = warp_f0_contour(res.clip, res.factors[2]).clip;
  if (res.fired[3]) res.clip = scale_energy(res.clip, res.factors[3]);
  if (res.fired[4]) res.clip = reverse(res.clip);
  return res;
}

}  // namespace phonemask::augment
