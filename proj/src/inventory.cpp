#include "phonemask/inventory.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "phonemask/digest.hpp"
#include "phonemask/dsp.hpp"
#include "phonemask/errors.hpp"

namespace phonemask::inventory {

std::string_view to_string(PhonemeClass c) {
  return c == PhonemeClass::Vowel ? "vowel" : "consonant";
}

namespace {

constexpr std::string_view kArpabetVowels[] = {
    "AA", "AE", "AH", "AO", "AW", "AX", "AXR", "AY", "EH", "ER",
    "EY", "IH", "IX", "IY", "OW", "OY", "UH", "UW", "UX"};

constexpr std::string_view kArpabetConsonants[] = {
    "B",  "CH", "D",  "DH", "DX", "EL", "EM", "EN", "F",  "G",  "HH", "JH", "K",  "L",
    "M",  "N",  "NG", "NX", "P",  "Q",  "R",  "S",  "SH", "T",  "TH", "V",  "W",  "WH",
    "Y",  "Z",  "ZH"};

// IPA aliases, matched case-sensitively before the ARPABET lookup.
constexpr std::string_view kIpaVowels[] = {
    "ɑ", "æ", "ʌ", "ɔ", "aʊ", "ə", "ɚ", "aɪ", "ɛ", "ɝ", "eɪ", "ɪ", "ɨ", "i", "oʊ",
    "ɔɪ", "ʊ", "u", "ʉ", "a", "e", "o", "ɒ", "iː", "uː", "ɑː", "ɔː", "ɜː"};

constexpr std::string_view kIpaConsonants[] = {
    "b", "tʃ", "d", "ð", "ɾ", "f", "ɡ", "g", "h", "dʒ", "k", "l", "m", "n", "ŋ", "p",
    "ʔ", "ɹ", "r", "s", "ʃ", "t", "θ", "v", "w", "j", "z", "ʒ", "ɫ", "ʍ"};

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string strip_stress(std::string_view label) {
  std::string out(label);
  if (out.size() > 1 && (out.back() == '0' || out.back() == '1' || out.back() == '2'))
    out.pop_back();
  return out;
}

std::string upper_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  return out;
}

double parse_seconds(std::string_view field, std::string_view name, std::size_t line) {
  double v = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v))
    throw ParseError(fmt::format("line {}: invalid {} '{}'", line, name, field), line);
  return v;
}

}  // namespace

const PhonemeClassifier& PhonemeClassifier::standard() {
  static const PhonemeClassifier table = [] {
    PhonemeClassifier c;
    for (auto v : kArpabetVowels) c.add(std::string(v), PhonemeClass::Vowel);
    for (auto v : kArpabetConsonants) c.add(std::string(v), PhonemeClass::Consonant);
    for (auto v : kIpaVowels) c.add(std::string(v), PhonemeClass::Vowel);
    for (auto v : kIpaConsonants) c.add(std::string(v), PhonemeClass::Consonant);
    return c;
  }();
  return table;
}

PhonemeClassifier PhonemeClassifier::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError(fmt::format("cannot open classification table {}", path.string()));
  PhonemeClassifier c;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto text = trim(raw);
    if (text.empty() || text.front() == '#') continue;
    const auto comma = text.find(',');
    if (comma == std::string_view::npos)
      throw ParseError(fmt::format("line {}: expected 'label,class'", line), line);
    const auto label = trim(text.substr(0, comma));
    const auto kind = trim(text.substr(comma + 1));
    if (label.empty()) throw ParseError(fmt::format("line {}: empty label", line), line);
    if (kind == "vowel")
      c.add(std::string(label), PhonemeClass::Vowel);
    else if (kind == "consonant")
      c.add(std::string(label), PhonemeClass::Consonant);
    else
      throw ParseError(fmt::format("line {}: class must be vowel or consonant, got '{}'", line,
                                   kind),
                       line);
  }
  return c;
}

void PhonemeClassifier::add(std::string label, PhonemeClass c) {
  table_.insert_or_assign(std::move(label), c);
}

PhonemeClass PhonemeClassifier::classify(std::string_view label) const {
  label = trim(label);
  if (label.empty()) throw ClassificationError("empty phoneme label");
  if (auto it = table_.find(label); it != table_.end()) return it->second;
  const auto stripped = strip_stress(label);
  if (auto it = table_.find(stripped); it != table_.end()) return it->second;
  if (auto it = table_.find(upper_ascii(stripped)); it != table_.end()) return it->second;
  throw ClassificationError(fmt::format("unknown phoneme label '{}'", label));
}

PhonemeClass classify_phoneme(std::string_view label) {
  return PhonemeClassifier::standard().classify(label);
}

void PhonemeInventory::add(PhonemeClip clip) {
  if (std::abs(clip.sample_rate - sample_rate_) > 1e-9)
    throw ContractError(fmt::format("clip rate {} differs from inventory rate {}",
                                    clip.sample_rate, sample_rate_));
  const std::size_t id = clips_.size();
  index_[{clip.speaker_id, clip.phoneme_class}].push_back(id);
  clips_.push_back(std::move(clip));
}

std::vector<std::string> PhonemeInventory::speakers() const {
  std::set<std::string> ids;
  for (const auto& [key, _] : index_) ids.insert(key.first);
  return {ids.begin(), ids.end()};
}

const std::vector<std::size_t>& PhonemeInventory::ids(const std::string& speaker,
                                                      PhonemeClass c) const {
  static const std::vector<std::size_t> kNone;
  const auto it = index_.find({speaker, c});
  return it == index_.end() ? kNone : it->second;
}

std::vector<std::size_t> PhonemeInventory::ids(PhonemeClass c) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < clips_.size(); ++i)
    if (clips_[i].phoneme_class == c) out.push_back(i);
  return out;
}

bool PhonemeInventory::has_speaker(const std::string& speaker) const {
  return !ids(speaker, PhonemeClass::Vowel).empty() ||
         !ids(speaker, PhonemeClass::Consonant).empty();
}

bool PhonemeInventory::ready_for_synthesis() const {
  return std::any_of(clips_.begin(), clips_.end(),
                     [](const auto& c) { return c.phoneme_class == PhonemeClass::Vowel; }) &&
         std::any_of(clips_.begin(), clips_.end(),
                     [](const auto& c) { return c.phoneme_class == PhonemeClass::Consonant; });
}

Waveform PhonemeInventory::speaker_audio(const std::string& speaker) const {
  Waveform w{{}, sample_rate_};
  for (const auto& c : clips_)
    if (c.speaker_id == speaker) w.samples.insert(w.samples.end(), c.samples.begin(), c.samples.end());
  return w;
}

std::string PhonemeInventory::digest() const {
  Digest d;
  d.update(sample_rate_);
  for (const auto& c : clips_) {
    d.update(c.speaker_id).update(std::string_view("\x1f", 1));
    d.update(c.label).update(std::string_view("\x1f", 1));
    d.update(to_string(c.phoneme_class));
    d.update(static_cast<double>(c.samples.size()));
    d.update(std::span<const double>(c.samples));
  }
  return d.finish();
}

AlignmentEntry parse_manifest_line(std::string_view text, std::size_t line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    fields.push_back(trim(text.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (fields.size() != 5)
    throw ParseError(fmt::format("line {}: expected 5 fields "
                                 "(audio_path,phoneme_label,start_s,end_s,speaker_id), got {}",
                                 line, fields.size()),
                     line);
  AlignmentEntry e;
  e.audio_path = std::string(fields[0]);
  e.phoneme_label = std::string(fields[1]);
  e.start_s = parse_seconds(fields[2], "start_s", line);
  e.end_s = parse_seconds(fields[3], "end_s", line);
  e.speaker_id = std::string(fields[4]);
  if (e.audio_path.empty()) throw ParseError(fmt::format("line {}: empty audio path", line), line);
  if (e.phoneme_label.empty())
    throw ParseError(fmt::format("line {}: empty phoneme label", line), line);
  if (e.speaker_id.empty()) throw ParseError(fmt::format("line {}: empty speaker id", line), line);
  if (e.start_s < 0.0) throw ParseError(fmt::format("line {}: start_s < 0", line), line);
  if (!(e.end_s > e.start_s))
    throw ParseError(fmt::format("line {}: end_s ({}) must exceed start_s ({})", line, e.end_s,
                                 e.start_s),
                     line);
  return e;
}

PhonemeInventory load_manifest(const std::filesystem::path& manifest,
                               const PhonemeClassifier& classifier, LoadReport* report) {
  std::ifstream in(manifest);
  if (!in) throw IngestError(fmt::format("cannot open manifest {}", manifest.string()));
  const auto base = manifest.parent_path();

  PhonemeInventory inv(kBasebandRate);
  LoadReport local;
  std::map<std::filesystem::path, Waveform> audio_cache;

  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto text = trim(raw);
    if (text.empty() || text.front() == '#') continue;
    auto entry = parse_manifest_line(text, line);
    ++local.entries;

    PhonemeClass cls;
    try {
      cls = classifier.classify(entry.phoneme_label);
    } catch (const ClassificationError& e) {
      throw ClassificationError(fmt::format("line {}: {}", line, e.what()));
    }

    const auto path = entry.audio_path.is_absolute() ? entry.audio_path : base / entry.audio_path;
    auto it = audio_cache.find(path);
    if (it == audio_cache.end()) {
      if (!std::filesystem::exists(path))
        throw IngestError(fmt::format("line {}: audio file not found: {}", line, path.string()));
      it = audio_cache.emplace(path, dsp::resample_to(read_wav(path), kBasebandRate)).first;
    }
    const Waveform& audio = it->second;

    if (entry.end_s - entry.start_s < kMinClipSeconds) {
      ++local.skipped_short;
      continue;
    }
    const auto first = static_cast<std::size_t>(std::llround(entry.start_s * audio.sample_rate));
    const auto last = static_cast<std::size_t>(std::llround(entry.end_s * audio.sample_rate));
    if (last > audio.size())
      throw IngestError(fmt::format("line {}: segment end {:.3f} s exceeds {} ({:.3f} s)", line,
                                    entry.end_s, path.string(), audio.duration_s()));

    PhonemeClip clip;
    clip.samples.assign(audio.samples.begin() + static_cast<std::ptrdiff_t>(first),
                        audio.samples.begin() + static_cast<std::ptrdiff_t>(last));
    clip.label = entry.phoneme_label;
    clip.phoneme_class = cls;
    clip.speaker_id = entry.speaker_id;
    clip.sample_rate = audio.sample_rate;
    inv.add(std::move(clip));
  }
  if (report) *report = local;
  return inv;
}

}  // namespace phonemask::inventory
