#include "phonemask/fixture.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

#include <fmt/format.h>

#include "phonemask/dsp.hpp"
#include "phonemask/errors.hpp"

namespace phonemask::fixture {

namespace {

using Formants = std::array<double, 3>;

const std::map<std::string, Formants>& vowel_formants() {
  static const std::map<std::string, Formants> table{
      {"AA", {730, 1090, 2440}}, {"AE", {660, 1720, 2410}}, {"AH", {520, 1190, 2390}},
      {"AO", {570, 840, 2410}},  {"EH", {530, 1840, 2480}}, {"ER", {490, 1350, 1690}},
      {"IH", {390, 1990, 2550}}, {"IY", {270, 2290, 3010}}, {"UH", {440, 1020, 2240}},
      {"UW", {300, 870, 2240}},
  };
  return table;
}

enum class Kind { Voiced, Nasal, Fricative, VoicedFricative };

struct ConsonantSpec {
  Kind kind;
  Formants formants;
  double noise_centre = 0.0;
  double noise_bandwidth = 0.0;
};

const std::map<std::string, ConsonantSpec>& consonant_specs() {
  static const std::map<std::string, ConsonantSpec> table{
      {"M", {Kind::Nasal, {250, 1000, 2200}}},
      {"N", {Kind::Nasal, {250, 1700, 2500}}},
      {"NG", {Kind::Nasal, {250, 2000, 2700}}},
      {"L", {Kind::Voiced, {360, 1300, 2700}}},
      {"R", {Kind::Voiced, {310, 1060, 1380}}},
      {"W", {Kind::Voiced, {290, 610, 2150}}},
      {"Y", {Kind::Voiced, {260, 2070, 3020}}},
      {"SH", {Kind::Fricative, {0, 0, 0}, 2600, 1400}},
      {"F", {Kind::Fricative, {0, 0, 0}, 2000, 2500}},
      {"HH", {Kind::Fricative, {0, 0, 0}, 1500, 1800}},
      {"V", {Kind::VoicedFricative, {300, 1200, 2400}, 2200, 2000}},
      {"Z", {Kind::VoicedFricative, {300, 1500, 2600}, 3000, 1200}},
  };
  return table;
}

constexpr double kBandLimitHz = 3800.0;

// Two-pole resonator with unity gain at DC.
void resonate(std::vector<double>& x, double freq, double bandwidth, double rate) {
  const double r = std::exp(-std::numbers::pi * bandwidth / rate);
  const double c = 2.0 * r * std::cos(2.0 * std::numbers::pi * freq / rate);
  const double g = 1.0 - c + r * r;
  double y1 = 0.0, y2 = 0.0;
  for (double& v : x) {
    const double y = g * v + c * y1 - r * r * y2;
    y2 = y1;
    y1 = y;
    v = y;
  }
}

// Harmonic glottal source with a slowly varying F0, harmonics below the band limit.
std::vector<double> glottal(std::size_t n, double f0, double rate, Rng& rng) {
  std::vector<double> out(n, 0.0);
  const double vibrato_hz = rng.uniform(2.0, 5.0);
  const double vibrato_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double declination = rng.uniform(-0.08, 0.04);
  const double dur = static_cast<double>(n) / rate;
  double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    const double f = f0 * (1.0 + 0.03 * std::sin(2.0 * std::numbers::pi * vibrato_hz * t + vibrato_phase) +
                           declination * t / std::max(dur, 1e-9));
    phase += 2.0 * std::numbers::pi * f / rate;
    double s = 0.0;
    const int harmonics = static_cast<int>(kBandLimitHz / f);
    for (int k = 1; k <= harmonics; ++k) s += std::sin(k * phase) / k;
    out[i] = s;
  }
  return out;
}

std::vector<double> shaped_noise(std::size_t n, double centre, double bandwidth, double rate, Rng& rng) {
  std::vector<double> x(n);
  for (double& v : x) v = rng.normal();
  resonate(x, centre, bandwidth, rate);
  resonate(x, centre, bandwidth, rate);
  return x;
}

void envelope(std::vector<double>& x, double rate, double ramp_s) {
  const auto ramp = std::min(x.size() / 2, static_cast<std::size_t>(ramp_s * rate));
  for (std::size_t i = 0; i < ramp; ++i) {
    const double g = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / static_cast<double>(ramp));
    x[i] *= g;
    x[x.size() - 1 - i] *= g;
  }
}

void band_limit(std::vector<double>& x, double rate) {
  static thread_local std::map<double, std::vector<double>> cache;
  auto it = cache.find(rate);
  if (it == cache.end()) it = cache.emplace(rate, dsp::design_lowpass(201, kBandLimitHz / rate)).first;
  x = dsp::filter_aligned(x, it->second, it->second.size() / 2);
}

void normalise_peak(std::vector<double>& x, double level) {
  const double p = peak(x);
  if (p > 0.0)
    for (double& v : x) v *= level / p;
}

Voice voice_for(const FixtureOptions& opts, std::size_t k) {
  const auto voices = default_voices();
  if (k >= voices.size() || k >= opts.speakers)
    throw ContractError(fmt::format("fixture speaker {} out of range", k));
  return voices[k];
}

}  // namespace

std::vector<Voice> default_voices() {
  return {{"spk0", 110.0, 1.0}, {"spk1", 145.0, 1.12}, {"spk2", 195.0, 1.2}, {"spk3", 235.0, 1.28}};
}

const std::vector<std::string>& vowel_labels() {
  static const std::vector<std::string> labels = [] {
    std::vector<std::string> v;
    for (const auto& [k, _] : vowel_formants()) v.push_back(k);
    return v;
  }();
  return labels;
}

const std::vector<std::string>& consonant_labels() {
  static const std::vector<std::string> labels = [] {
    std::vector<std::string> v;
    for (const auto& [k, _] : consonant_specs()) v.push_back(k);
    return v;
  }();
  return labels;
}

std::vector<double> render_phoneme(const std::string& label, const Voice& voice, double duration_s,
                                   Rng& rng, double rate) {
  const auto n = static_cast<std::size_t>(std::llround(duration_s * rate));
  if (n == 0) throw ContractError("phoneme duration must be positive");
  const double f0 = voice.f0_hz * rng.uniform(0.95, 1.05);
  const double fs = voice.formant_scale;
  std::vector<double> x;
  double level = 0.5;

  if (const auto v = vowel_formants().find(label); v != vowel_formants().end()) {
    x = glottal(n, f0, rate, rng);
    const std::array<double, 3> bw{80.0, 100.0, 140.0};
    for (std::size_t k = 0; k < 3; ++k) resonate(x, v->second[k] * fs * rng.uniform(0.97, 1.03), bw[k], rate);
    level = rng.uniform(0.4, 0.6);
  } else if (const auto c = consonant_specs().find(label); c != consonant_specs().end()) {
    const auto& spec = c->second;
    switch (spec.kind) {
      case Kind::Voiced:
      case Kind::Nasal: {
        x = glottal(n, f0, rate, rng);
        const double bw = spec.kind == Kind::Nasal ? 200.0 : 120.0;
        for (double f : spec.formants) resonate(x, f * fs, bw, rate);
        level = spec.kind == Kind::Nasal ? rng.uniform(0.15, 0.25) : rng.uniform(0.2, 0.35);
        break;
      }
      case Kind::Fricative:
        x = shaped_noise(n, spec.noise_centre * fs, spec.noise_bandwidth, rate, rng);
        level = rng.uniform(0.1, 0.2);
        break;
      case Kind::VoicedFricative: {
        x = glottal(n, f0, rate, rng);
        for (double f : spec.formants) resonate(x, f * fs, 150.0, rate);
        normalise_peak(x, 1.0);
        auto hiss = shaped_noise(n, spec.noise_centre * fs, spec.noise_bandwidth, rate, rng);
        normalise_peak(hiss, 0.5);
        for (std::size_t i = 0; i < n; ++i) x[i] += hiss[i];
        level = rng.uniform(0.15, 0.25);
        break;
      }
    }
  } else {
    throw ContractError(fmt::format("fixture has no model for phoneme '{}'", label));
  }
  band_limit(x, rate);
  envelope(x, rate, 0.01);
  normalise_peak(x, level);
  return x;
}

Waveform render_utterance(const Voice& voice, double duration_s, Rng& rng, double rate) {
  const auto target = static_cast<std::size_t>(std::llround(duration_s * rate));
  const auto& vowels = vowel_labels();
  const auto& consonants = consonant_labels();
  std::vector<double> out;
  while (out.size() < target) {
    auto c = render_phoneme(consonants[rng.index(consonants.size())], voice, rng.uniform(0.05, 0.1), rng, rate);
    auto v = render_phoneme(vowels[rng.index(vowels.size())], voice, rng.uniform(0.1, 0.22), rng, rate);
    out.insert(out.end(), c.begin(), c.end());
    out.insert(out.end(), v.begin(), v.end());
    if (rng.bernoulli(0.3))
      out.resize(out.size() + static_cast<std::size_t>(rng.uniform(0.05, 0.15) * rate), 0.0);
  }
  out.resize(target);
  normalise_peak(out, 0.5);
  return {std::move(out), rate};
}

namespace {

struct SpeakerTake {
  Waveform audio;
  std::vector<inventory::AlignmentEntry> entries;
};

// One recording per speaker: every phoneme separated by 20 ms of silence.
SpeakerTake speaker_take(const FixtureOptions& opts, std::size_t k) {
  const Voice voice = voice_for(opts, k);
  Rng rng = Rng(opts.seed).derive(100 + k);
  const double rate = kBasebandRate;
  const auto gap = static_cast<std::size_t>(0.02 * rate);
  SpeakerTake take;
  take.audio.sample_rate = rate;
  auto& s = take.audio.samples;
  s.resize(gap, 0.0);
  auto add = [&](const std::string& label, double dur) {
    const auto x = render_phoneme(label, voice, dur, rng, rate);
    inventory::AlignmentEntry e;
    e.phoneme_label = label;
    e.speaker_id = voice.id;
    e.start_s = static_cast<double>(s.size()) / rate;
    s.insert(s.end(), x.begin(), x.end());
    e.end_s = static_cast<double>(s.size()) / rate;
    s.resize(s.size() + gap, 0.0);
    take.entries.push_back(e);
  };
  for (std::size_t r = 0; r < opts.vowel_repeats; ++r)
    for (const auto& v : vowel_labels()) add(v, rng.uniform(0.08, 0.2));
  for (std::size_t r = 0; r < opts.consonant_repeats; ++r)
    for (const auto& c : consonant_labels()) add(c, rng.uniform(0.05, 0.12));
  return take;
}

}  // namespace

inventory::PhonemeInventory make_inventory(const FixtureOptions& opts) {
  inventory::PhonemeInventory inv(kBasebandRate);
  for (std::size_t k = 0; k < opts.speakers; ++k) {
    const auto take = speaker_take(opts, k);
    for (const auto& e : take.entries) {
      const auto lo = static_cast<std::size_t>(std::llround(e.start_s * kBasebandRate));
      const auto hi = static_cast<std::size_t>(std::llround(e.end_s * kBasebandRate));
      inventory::PhonemeClip clip;
      clip.samples.assign(take.audio.samples.begin() + static_cast<std::ptrdiff_t>(lo),
                          take.audio.samples.begin() + static_cast<std::ptrdiff_t>(hi));
      clip.label = e.phoneme_label;
      clip.phoneme_class = inventory::classify_phoneme(e.phoneme_label);
      clip.speaker_id = e.speaker_id;
      clip.sample_rate = kBasebandRate;
      inv.add(std::move(clip));
    }
  }
  return inv;
}

Waveform registration_audio(const FixtureOptions& opts) {
  Rng rng = Rng(opts.seed).derive(200);
  return render_utterance(voice_for(opts, opts.registration_speaker), opts.registration_seconds, rng);
}

Waveform clean_speech(const FixtureOptions& opts, std::size_t index) {
  Rng rng = Rng(opts.seed).derive(300 + index);
  const Voice voice = voice_for(opts, index % opts.speakers);
  return render_utterance(voice, opts.speech_seconds, rng);
}

CorpusPaths write_corpus(const std::filesystem::path& dir, const FixtureOptions& opts) {
  std::filesystem::create_directories(dir);
  CorpusPaths paths;
  paths.manifest = dir / "manifest.csv";
  std::ofstream manifest(paths.manifest);
  if (!manifest) throw Error(fmt::format("cannot write {}", paths.manifest.string()));
  manifest << "# audio_path,phoneme_label,start_s,end_s,speaker_id\n";
  for (std::size_t k = 0; k < opts.speakers; ++k) {
    const auto take = speaker_take(opts, k);
    const std::string name = fmt::format("{}.wav", voice_for(opts, k).id);
    write_wav(dir / name, take.audio);
    for (const auto& e : take.entries)
      manifest << fmt::format("{},{},{:.6f},{:.6f},{}\n", name, e.phoneme_label, e.start_s, e.end_s,
                              e.speaker_id);
  }
  paths.registration = dir / "registration.wav";
  write_wav(paths.registration, registration_audio(opts));
  for (std::size_t i = 0; i < opts.speech_clips; ++i) {
    paths.speech.push_back(dir / fmt::format("speech_{}.wav", i));
    write_wav(paths.speech.back(), clean_speech(opts, i));
  }
  return paths;
}

}  // namespace phonemask::fixture
