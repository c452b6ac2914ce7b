#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "phonemask/audio.hpp"
#include "phonemask/inventory.hpp"

namespace phonemask::voiceprint {

struct Voiceprint {
  std::vector<double> embedding;  // unit L2 norm
  double source_duration_s = 0.0;

  std::size_t dimension() const { return embedding.size(); }
};

struct SpeakerProfile {
  Voiceprint representative;
  std::string matched_speaker_id;
  std::size_t member_count = 1;
  double matched_cosine = 0.0;
  std::vector<std::string> warnings;
};

// Pluggable extractor. The built-in one is a spectral statistic; neural
// voiceprints can be supplied through an embedding sidecar file instead.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual Voiceprint embed(const Waveform& audio) const = 0;
};

// Level-normalised 40-band log-mel statistics (per-band mean and standard
// deviation over voiced frames above the silence floor), D = 80, L2-normalised.
class SpectralEmbedder final : public Embedder {
 public:
  static constexpr std::size_t kBands = 40;
  static constexpr std::size_t kDimension = 2 * kBands;
  static constexpr double kFrameSeconds = 0.025;
  static constexpr double kHopSeconds = 0.010;
  static constexpr double kSilenceFloorDbfs = -45.0;
  static constexpr double kMinVoicedSeconds = 1.0;
  static constexpr double kMinF0Hz = 70.0;
  static constexpr double kMaxF0Hz = 400.0;
  static constexpr double kVoicingThreshold = 0.3;

  Voiceprint embed(const Waveform& audio) const override;
};

Voiceprint embed(const Waveform& audio);

// Normalised dot product. Throws ContractError on dimension mismatch.
double cosine(const Voiceprint& a, const Voiceprint& b);
double cosine(std::span<const double> a, std::span<const double> b);
// 1 - cosine.
double distance(const Voiceprint& a, const Voiceprint& b);

// Scales to unit norm; vectors already at unit norm (to rounding) are
// returned unchanged. Throws ContractError for (near-)zero vectors.
std::vector<double> normalized(std::vector<double> v);

// Candidate dataset speakers with their voiceprints, ordered by speaker id.
using Gallery = std::map<std::string, Voiceprint>;

struct GalleryReport {
  std::vector<std::string> skipped;  // speakers whose audio could not be embedded
};

Gallery build_gallery(const inventory::PhonemeInventory& inv, const Embedder& embedder,
                      GalleryReport* report = nullptr);

// Sidecar format: one `speaker_id,v1,...,vD` record per line, `#` comments.
Gallery load_sidecar(const std::filesystem::path& path);
void save_sidecar(const std::filesystem::path& path, const Gallery& gallery);

struct RegistrationOptions {
  double min_duration_s = 5.0;  // shorter registrations warn, they do not fail
};

// Argmax of cosine over the gallery; ties go to the lexicographically
// smallest speaker id.
SpeakerProfile match(const Voiceprint& representative, const Gallery& gallery);

SpeakerProfile register_single(const std::vector<Waveform>& samples, const Gallery& gallery,
                               const Embedder& embedder, const RegistrationOptions& opts = {});
SpeakerProfile register_single(const std::vector<Waveform>& samples,
                               const inventory::PhonemeInventory& inv,
                               const RegistrationOptions& opts = {});

// Representative = renormalised mean of per-user voiceprints.
SpeakerProfile register_group(const std::vector<std::vector<Waveform>>& users,
                              const Gallery& gallery, const Embedder& embedder,
                              const RegistrationOptions& opts = {});
SpeakerProfile register_group(const std::vector<std::vector<Waveform>>& users,
                              const inventory::PhonemeInventory& inv,
                              const RegistrationOptions& opts = {});

// Group matching from precomputed user voiceprints (sidecar path).
SpeakerProfile register_group(const std::vector<Voiceprint>& members, const Gallery& gallery);

}  // namespace phonemask::voiceprint
