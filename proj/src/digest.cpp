#include "phonemask/digest.hpp"

#include <array>
#include <stdexcept>

#include <openssl/evp.h>

namespace phonemask {

Digest::Digest() : ctx_(EVP_MD_CTX_new()) {
  if (ctx_ == nullptr || EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 context initialisation failed");
}

Digest::~Digest() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

Digest& Digest::update(std::string_view bytes) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), bytes.data(), bytes.size());
  return *this;
}

// Samples are hashed as their IEEE-754 bytes (little-endian host).
Digest& Digest::update(std::span<const double> samples) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), samples.data(), samples.size_bytes());
  return *this;
}

Digest& Digest::update(double value) { return update(std::span<const double>(&value, 1)); }

std::string Digest::finish() {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), md.data(), &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

std::string sha256_hex(std::string_view bytes) { return Digest().update(bytes).finish(); }

std::string sha256_hex(std::span<const double> samples) {
  return Digest().update(samples).finish();
}

}  // namespace phonemask
