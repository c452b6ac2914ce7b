#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace phonemask {

// Mono signal with its sampling rate. All processing is done in double.
struct Waveform {
  std::vector<double> samples;
  double sample_rate = 48000.0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

inline constexpr double kBasebandRate = 48000.0;
inline constexpr double kUltrasonicRate = 192000.0;

double energy(std::span<const double> x);
double rms(std::span<const double> x);
double peak(std::span<const double> x);
double mean(std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);

// 20*log10 with a floor so silent input maps to a finite value.
double amplitude_db(double amplitude);
double db_to_amplitude(double db);

enum class SampleFormat { Pcm16, Float32 };

// Reads a RIFF/WAVE file (PCM 16-bit or IEEE float 32-bit). Multi-channel
// files are rejected; the library works on mono captures.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w,
               SampleFormat format = SampleFormat::Float32);
// The bytes write_wav would produce.
std::string encode_wav(const Waveform& w, SampleFormat format = SampleFormat::Float32);

}  // namespace phonemask
