#include "phonemask/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>

#include <fftw3.h>
#include <fmt/format.h>

#include "phonemask/errors.hpp"

namespace phonemask::dsp {

namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

struct RealFft::Impl {
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;
};

RealFft::RealFft(std::size_t n) : n_(n), impl_(std::make_unique<Impl>()) {
  if (n == 0) throw ContractError("FFT size must be positive");
  std::lock_guard lock(planner_mutex());
  impl_->real = fftw_alloc_real(n);
  impl_->spec = fftw_alloc_complex(n / 2 + 1);
  const int ni = static_cast<int>(n);
  impl_->fwd = fftw_plan_dft_r2c_1d(ni, impl_->real, impl_->spec, FFTW_ESTIMATE);
  impl_->inv = fftw_plan_dft_c2r_1d(ni, impl_->spec, impl_->real, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(impl_->fwd);
  fftw_destroy_plan(impl_->inv);
  fftw_free(impl_->real);
  fftw_free(impl_->spec);
}

void RealFft::forward(std::span<const double> in, std::vector<Complex>& out) const {
  const std::size_t m = std::min(in.size(), n_);
  std::copy_n(in.begin(), m, impl_->real);
  std::fill(impl_->real + m, impl_->real + n_, 0.0);
  fftw_execute(impl_->fwd);
  out.resize(bins());
  for (std::size_t k = 0; k < bins(); ++k) out[k] = {impl_->spec[k][0], impl_->spec[k][1]};
}

std::vector<Complex> RealFft::forward(std::span<const double> in) const {
  std::vector<Complex> out;
  forward(in, out);
  return out;
}

void RealFft::inverse(std::span<const Complex> in, std::vector<double>& out) const {
  if (in.size() != bins())
    throw ContractError(fmt::format("inverse FFT expects {} bins, got {}", bins(), in.size()));
  for (std::size_t k = 0; k < bins(); ++k) {
    impl_->spec[k][0] = in[k].real();
    impl_->spec[k][1] = in[k].imag();
  }
  fftw_execute(impl_->inv);
  out.resize(n_);
  const double scale = 1.0 / static_cast<double>(n_);
  for (std::size_t i = 0; i < n_; ++i) out[i] = impl_->real[i] * scale;
}

std::vector<double> RealFft::inverse(std::span<const Complex> in) const {
  std::vector<double> out;
  inverse(in, out);
  return out;
}

const RealFft& fft(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<RealFft>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<RealFft>(n);
  return *slot;
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

std::size_t fast_size(std::size_t n) {
  if (n <= 1) return 1;
  std::size_t best = next_pow2(n);
  for (std::size_t p5 = 1; p5 < best; p5 *= 5)
    for (std::size_t p35 = p5; p35 < best; p35 *= 3) {
      std::size_t v = p35;
      while (v < n) v <<= 1;
      best = std::min(best, v);
    }
  return best;
}

std::vector<double> convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  if (std::min(a.size(), b.size()) <= 64) {
    std::vector<double> y(out_len, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < b.size(); ++j) y[i + j] += a[i] * b[j];
    return y;
  }
  const auto& plan = fft(fast_size(out_len));
  auto fa = plan.forward(a);
  const auto fb = plan.forward(b);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
  auto y = plan.inverse(fa);
  y.resize(out_len);
  return y;
}

std::vector<double> filter_aligned(std::span<const double> x, std::span<const double> taps,
                                   std::size_t delay) {
  const auto full = convolve(x, taps);
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size() && i + delay < full.size(); ++i) y[i] = full[i + delay];
  return y;
}

namespace {
double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 64; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}
}  // namespace

std::vector<double> kaiser_window(std::size_t n, double beta) {
  std::vector<double> w(n, 1.0);
  if (n < 2) return w;
  const double denom = bessel_i0(beta);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0;
    w[i] = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / denom;
  }
  return w;
}

std::vector<double> hann_window(std::size_t n, bool periodic) {
  std::vector<double> w(n, 1.0);
  if (n < 2) return w;
  const double span = periodic ? static_cast<double>(n) : static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / span);
  return w;
}

std::vector<double> hamming_window(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n < 2) return w;
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(n - 1));
  return w;
}

std::vector<double> design_lowpass(std::size_t num_taps, double cutoff, double kaiser_beta) {
  if (num_taps % 2 == 0) ++num_taps;
  if (!(cutoff > 0.0 && cutoff < 0.5))
    throw ContractError(fmt::format("lowpass cutoff {} outside (0, 0.5)", cutoff));
  const auto win = kaiser_window(num_taps, kaiser_beta);
  const double mid = static_cast<double>(num_taps - 1) / 2.0;
  std::vector<double> h(num_taps);
  for (std::size_t i = 0; i < num_taps; ++i)
    h[i] = 2.0 * cutoff * sinc(2.0 * cutoff * (static_cast<double>(i) - mid)) * win[i];
  return h;
}

std::vector<double> design_from_response(const std::function<double(double)>& gain,
                                         std::size_t num_taps, double sample_rate,
                                         double kaiser_beta) {
  if (num_taps % 2 == 0) ++num_taps;
  const std::size_t grid = std::max<std::size_t>(16384, next_pow2(8 * num_taps));
  const auto& plan = fft(grid);
  std::vector<Complex> spectrum(plan.bins());
  for (std::size_t k = 0; k < spectrum.size(); ++k)
    spectrum[k] = gain(static_cast<double>(k) * sample_rate / static_cast<double>(grid));
  // Zero-phase impulse response, centred and windowed.
  const auto zero_phase = plan.inverse(spectrum);
  const auto win = kaiser_window(num_taps, kaiser_beta);
  const std::size_t half = num_taps / 2;
  std::vector<double> h(num_taps);
  for (std::size_t i = 0; i < num_taps; ++i) {
    const std::ptrdiff_t t = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(half);
    const std::size_t idx = t >= 0 ? static_cast<std::size_t>(t)
                                   : grid - static_cast<std::size_t>(-t);
    h[i] = zero_phase[idx] * win[i];
  }
  return h;
}

Complex fir_response(std::span<const double> taps, double freq_hz, double sample_rate) {
  const double w = -2.0 * std::numbers::pi * freq_hz / sample_rate;
  Complex acc{0.0, 0.0};
  for (std::size_t i = 0; i < taps.size(); ++i)
    acc += taps[i] * std::polar(1.0, w * static_cast<double>(i));
  return acc;
}

std::vector<double> resample(std::span<const double> x, std::size_t up, std::size_t down,
                             double cutoff_fraction) {
  if (up == 0 || down == 0) throw ContractError("resample factors must be positive");
  const std::size_t g = std::gcd(up, down);
  up /= g;
  down /= g;
  if (up == 1 && down == 1) return {x.begin(), x.end()};

  constexpr std::size_t kHalfTapsPerPhase = 32;
  const std::size_t factor = std::max(up, down);
  const std::size_t len = 2 * kHalfTapsPerPhase * factor + 1;
  auto h = design_lowpass(len, cutoff_fraction * 0.5 / static_cast<double>(factor), 8.6);
  for (double& v : h) v *= static_cast<double>(up);
  const std::size_t delay = (len - 1) / 2;

  const std::size_t out_len = (x.size() * up + down - 1) / down;
  std::vector<double> y(out_len, 0.0);
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  for (std::size_t m = 0; m < out_len; ++m) {
    // Position on the zero-stuffed upsampled grid, delay-compensated.
    const std::size_t p = m * down + delay;
    double acc = 0.0;
    for (std::size_t k = p % up; k < len && k <= p; k += up) {
      const auto idx = static_cast<std::ptrdiff_t>((p - k) / up);
      if (idx < n) acc += h[k] * x[static_cast<std::size_t>(idx)];
    }
    y[m] = acc;
  }
  return y;
}

Waveform resample_to(const Waveform& w, double target_rate, double cutoff_fraction) {
  const auto from = static_cast<std::size_t>(std::llround(w.sample_rate));
  const auto to = static_cast<std::size_t>(std::llround(target_rate));
  if (from == 0 || to == 0 || std::abs(w.sample_rate - static_cast<double>(from)) > 1e-9 ||
      std::abs(target_rate - static_cast<double>(to)) > 1e-9)
    throw ContractError(fmt::format("cannot resample {} Hz -> {} Hz (integral rates required)",
                                    w.sample_rate, target_rate));
  if (from == to) return w;
  const std::size_t g = std::gcd(from, to);
  return Waveform{resample(w.samples, to / g, from / g, cutoff_fraction), target_rate};
}

std::vector<double> cross_correlate(std::span<const double> a, std::span<const double> b,
                                    std::size_t max_lag) {
  std::vector<double> out(2 * max_lag + 1, 0.0);
  if (a.empty() || b.empty()) return out;
  const auto& plan = fft(fast_size(a.size() + b.size() + max_lag));
  auto fa = plan.forward(a);
  const auto fb = plan.forward(b);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= std::conj(fb[k]);
  const auto c = plan.inverse(fa);
  const std::size_t n = plan.size();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto lag = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(max_lag);
    const std::size_t idx = lag >= 0 ? static_cast<std::size_t>(lag)
                                     : n - static_cast<std::size_t>(-lag);
    out[i] = c[idx];
  }
  return out;
}

double band_power(std::span<const double> x, double sample_rate, double lo_hz, double hi_hz) {
  const std::size_t n = x.size();
  if (n == 0) return 0.0;
  const auto spec = fft(n).forward(x);
  const double df = sample_rate / static_cast<double>(n);
  double acc = 0.0;
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const double f = static_cast<double>(k) * df;
    if (f < lo_hz || f > hi_hz) continue;
    const bool edge = k == 0 || (n % 2 == 0 && k == n / 2);
    acc += (edge ? 1.0 : 2.0) * std::norm(spec[k]);
  }
  return acc / (static_cast<double>(n) * static_cast<double>(n));
}

}  // namespace phonemask::dsp
