#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "phonemask/audio.hpp"

namespace phonemask::inventory {

enum class PhonemeClass { Vowel, Consonant };

std::string_view to_string(PhonemeClass c);

struct AlignmentEntry {
  std::filesystem::path audio_path;
  std::string phoneme_label;
  double start_s = 0.0;
  double end_s = 0.0;
  std::string speaker_id;
};

struct PhonemeClip {
  std::vector<double> samples;
  std::string label;
  PhonemeClass phoneme_class = PhonemeClass::Vowel;
  std::string speaker_id;
  double sample_rate = kBasebandRate;

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// Label -> class table. The default instance ships ARPABET (with stress
// digits stripped) plus common IPA aliases; other languages can load a
// `label,vowel|consonant` table from disk.
class PhonemeClassifier {
 public:
  static const PhonemeClassifier& standard();
  static PhonemeClassifier from_file(const std::filesystem::path& path);

  PhonemeClassifier() = default;
  void add(std::string label, PhonemeClass c);

  // Throws ClassificationError for labels outside the table.
  PhonemeClass classify(std::string_view label) const;

 private:
  std::map<std::string, PhonemeClass, std::less<>> table_;
};

PhonemeClass classify_phoneme(std::string_view label);

class PhonemeInventory {
 public:
  explicit PhonemeInventory(double sample_rate = kBasebandRate) : sample_rate_(sample_rate) {}

  // Clip must already be at the inventory rate.
  void add(PhonemeClip clip);

  double sample_rate() const { return sample_rate_; }
  std::size_t size() const { return clips_.size(); }
  bool empty() const { return clips_.empty(); }
  const PhonemeClip& clip(std::size_t id) const { return clips_.at(id); }
  const std::vector<PhonemeClip>& clips() const { return clips_; }

  // Sorted speaker ids.
  std::vector<std::string> speakers() const;
  // Clip ids for one speaker and class, in ingest order.
  const std::vector<std::size_t>& ids(const std::string& speaker, PhonemeClass c) const;
  // Clip ids of a class across all speakers, in ingest order.
  std::vector<std::size_t> ids(PhonemeClass c) const;
  std::size_t count(const std::string& speaker, PhonemeClass c) const {
    return ids(speaker, c).size();
  }
  bool has_speaker(const std::string& speaker) const;
  // True once at least one vowel and one consonant exist.
  bool ready_for_synthesis() const;

  // Every clip's samples concatenated in ingest order.
  Waveform speaker_audio(const std::string& speaker) const;

  // SHA-256 over labels, classes, speakers and sample bytes.
  std::string digest() const;

 private:
  double sample_rate_;
  std::vector<PhonemeClip> clips_;
  std::map<std::pair<std::string, PhonemeClass>, std::vector<std::size_t>> index_;
};

struct LoadReport {
  std::size_t entries = 0;
  std::size_t skipped_short = 0;
};

inline constexpr double kMinClipSeconds = 0.010;

// Parses one manifest record; `line` is reported in ParseError.
AlignmentEntry parse_manifest_line(std::string_view text, std::size_t line);

// Reads `audio_path,phoneme_label,start_s,end_s,speaker_id` records (paths
// relative to the manifest), slices each referenced segment and resamples
// to the inventory rate. Segments shorter than 10 ms are counted in
// `report` and skipped.
PhonemeInventory load_manifest(const std::filesystem::path& manifest,
                               const PhonemeClassifier& classifier = PhonemeClassifier::standard(),
                               LoadReport* report = nullptr);

}  // namespace phonemask::inventory
