#pragma once

#include <span>
#include <string>
#include <string_view>

namespace phonemask {

// Incremental SHA-256, hex-encoded on finish().
class Digest {
 public:
  Digest();
  ~Digest();
  Digest(const Digest&) = delete;
  Digest& operator=(const Digest&) = delete;

  Digest& update(std::string_view bytes);
  Digest& update(std::span<const double> samples);
  Digest& update(double value);
  std::string finish();

 private:
  void* ctx_;
};

std::string sha256_hex(std::string_view bytes);
std::string sha256_hex(std::span<const double> samples);

}  // namespace phonemask
