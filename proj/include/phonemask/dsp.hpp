#pragma once

#include <complex>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "phonemask/audio.hpp"

namespace phonemask::dsp {

using Complex = std::complex<double>;

// Real-input FFT of fixed size backed by FFTW. forward() returns the n/2+1
// non-negative bins; inverse() takes them back and applies the 1/n scale.
class RealFft {
 public:
  explicit RealFft(std::size_t n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  // Input shorter than size() is zero-padded.
  void forward(std::span<const double> in, std::vector<Complex>& out) const;
  std::vector<Complex> forward(std::span<const double> in) const;
  void inverse(std::span<const Complex> in, std::vector<double>& out) const;
  std::vector<double> inverse(std::span<const Complex> in) const;

 private:
  struct Impl;
  std::size_t n_;
  std::unique_ptr<Impl> impl_;
};

// Per-thread plan cache.
const RealFft& fft(std::size_t n);

std::size_t next_pow2(std::size_t n);
// Smallest 2^a * 3^b * 5^c >= n; FFTW is fast on these sizes.
std::size_t fast_size(std::size_t n);

// Full linear convolution, length a.size() + b.size() - 1.
std::vector<double> convolve(std::span<const double> a, std::span<const double> b);

// Convolves with taps and returns x.size() samples starting at `delay`,
// i.e. a linear-phase filter with its group delay removed.
std::vector<double> filter_aligned(std::span<const double> x, std::span<const double> taps,
                                   std::size_t delay);

std::vector<double> kaiser_window(std::size_t n, double beta);
std::vector<double> hann_window(std::size_t n, bool periodic = false);
std::vector<double> hamming_window(std::size_t n);

// Windowed-sinc lowpass; cutoff in cycles/sample (0 < cutoff < 0.5), odd length.
std::vector<double> design_lowpass(std::size_t num_taps, double cutoff, double kaiser_beta = 8.6);

// Linear-phase FIR (odd length) whose magnitude follows `gain(freq_hz)`
// (linear, not dB), by frequency sampling on a dense grid then windowing.
std::vector<double> design_from_response(const std::function<double(double)>& gain,
                                         std::size_t num_taps, double sample_rate,
                                         double kaiser_beta = 6.0);

// Complex frequency response of an FIR at freq_hz (direct DTFT).
Complex fir_response(std::span<const double> taps, double freq_hz, double sample_rate);

// Rational polyphase resampler with the filter delay compensated, so sample
// k of the input lines up with sample k*up/down of the output.
// Output length is ceil(n * up / down).
std::vector<double> resample(std::span<const double> x, std::size_t up, std::size_t down,
                             double cutoff_fraction = 0.9);

// Resamples to target_rate; rates must be integral so the ratio is rational.
Waveform resample_to(const Waveform& w, double target_rate, double cutoff_fraction = 0.9);

// Cross-correlation c[k] = sum_t a[t + k] * b[t] for k in [-max_lag, max_lag];
// index 0 of the result is lag -max_lag.
std::vector<double> cross_correlate(std::span<const double> a, std::span<const double> b,
                                    std::size_t max_lag);

// Mean-square power of x in [lo_hz, hi_hz] from a periodogram.
double band_power(std::span<const double> x, double sample_rate, double lo_hz, double hi_hz);

}  // namespace phonemask::dsp
