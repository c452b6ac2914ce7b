#include "phonemask/audio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include <fmt/format.h>

#include "phonemask/errors.hpp"

namespace phonemask {

double energy(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc;
}

double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::sqrt(energy(x) / static_cast<double>(x.size()));
}

double peak(std::span<const double> x) {
  double p = 0.0;
  for (double v : x) p = std::max(p, std::abs(v));
  return p;
}

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double dot(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = std::min(a.size(), b.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double amplitude_db(double amplitude) {
  return 20.0 * std::log10(std::max(std::abs(amplitude), 1e-15));
}

double db_to_amplitude(double db) { return std::pow(10.0, db / 20.0); }

namespace {

static_assert(std::endian::native == std::endian::little,
              "WAV I/O assumes a little-endian host");

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <typename T>
T read_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void put_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

}  // namespace

Waveform read_wav(const std::filesystem::path& file) {
  const std::string path = file.string();
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IngestError(fmt::format("cannot open audio file {}", path));
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
    throw IngestError(fmt::format("{} is not a RIFF/WAVE file", path));

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const char* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const std::uint32_t len = read_le<std::uint32_t>(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(len, bytes.size() - body);
    if (id == "fmt ") {
      if (avail < 16) throw IngestError(fmt::format("{}: truncated fmt chunk", path));
      format = read_le<std::uint16_t>(bytes.data() + body);
      channels = read_le<std::uint16_t>(bytes.data() + body + 2);
      rate = read_le<std::uint32_t>(bytes.data() + body + 4);
      bits = read_le<std::uint16_t>(bytes.data() + body + 14);
      if (format == kFormatExtensible && avail >= 26)
        format = read_le<std::uint16_t>(bytes.data() + body + 24);
    } else if (id == "data") {
      data = bytes.data() + body;
      data_len = avail;
    }
    pos = body + len + (len & 1u);
  }

  if (format == 0 || data == nullptr)
    throw IngestError(fmt::format("{}: missing fmt or data chunk", path));
  if (channels != 1)
    throw IngestError(fmt::format("{}: expected mono audio, found {} channels", path, channels));
  if (rate == 0) throw IngestError(fmt::format("{}: zero sample rate", path));

  Waveform w;
  w.sample_rate = rate;
  if (format == kFormatPcm && bits == 16) {
    const std::size_t n = data_len / 2;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      w.samples[i] = read_le<std::int16_t>(data + 2 * i) / 32768.0;
  } else if (format == kFormatFloat && bits == 32) {
    const std::size_t n = data_len / 4;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) w.samples[i] = read_le<float>(data + 4 * i);
  } else {
    throw IngestError(fmt::format("{}: unsupported sample format (tag {}, {} bits)", path,
                                  format, bits));
  }
  return w;
}

std::string encode_wav(const Waveform& w, SampleFormat format) {
  const bool is_float = format == SampleFormat::Float32;
  const std::uint16_t bits = is_float ? 32 : 16;
  const std::uint16_t block = bits / 8;
  const auto rate = static_cast<std::uint32_t>(std::lround(w.sample_rate));
  const auto data_len = static_cast<std::uint32_t>(w.samples.size() * block);

  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  put_le<std::uint32_t>(out, 36 + data_len);
  out += "WAVEfmt ";
  put_le<std::uint32_t>(out, 16);
  put_le<std::uint16_t>(out, is_float ? kFormatFloat : kFormatPcm);
  put_le<std::uint16_t>(out, 1);
  put_le<std::uint32_t>(out, rate);
  put_le<std::uint32_t>(out, rate * block);
  put_le<std::uint16_t>(out, block);
  put_le<std::uint16_t>(out, bits);
  out += "data";
  put_le<std::uint32_t>(out, data_len);
  for (double v : w.samples) {
    if (is_float) {
      put_le<float>(out, static_cast<float>(v));
    } else {
      const double s = std::clamp(v, -1.0, 32767.0 / 32768.0) * 32768.0;
      put_le<std::int16_t>(out, static_cast<std::int16_t>(std::lround(s)));
    }
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const Waveform& w, SampleFormat format) {
  const std::string name = path.string();
  const std::string out = encode_wav(w, format);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(fmt::format("cannot write {}", name));
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(fmt::format("short write to {}", name));
}

}  // namespace phonemask
