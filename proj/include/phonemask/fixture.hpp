#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "phonemask/audio.hpp"
#include "phonemask/inventory.hpp"
#include "phonemask/rng.hpp"

// Synthetic speech corpus: formant-synthesised phonemes for a handful of
// speakers, used by tests, the acceptance suite and the `fixture` command.
namespace phonemask::fixture {

struct Voice {
  std::string id;
  double f0_hz = 120.0;
  double formant_scale = 1.0;
};

std::vector<Voice> default_voices();

const std::vector<std::string>& vowel_labels();
const std::vector<std::string>& consonant_labels();

// One phoneme of `duration_s`, band-limited below 4 kHz.
std::vector<double> render_phoneme(const std::string& label, const Voice& voice, double duration_s,
                                   Rng& rng, double sample_rate = kBasebandRate);

// Consonant-vowel syllables with short pauses, peak-normalised to 0.5.
Waveform render_utterance(const Voice& voice, double duration_s, Rng& rng,
                          double sample_rate = kBasebandRate);

struct FixtureOptions {
  std::size_t speakers = 4;
  std::size_t vowel_repeats = 3;
  std::size_t consonant_repeats = 2;
  std::uint64_t seed = 7;
  std::size_t speech_clips = 2;
  double speech_seconds = 8.0;
  double registration_seconds = 6.0;
  std::size_t registration_speaker = 0;
};

inventory::PhonemeInventory make_inventory(const FixtureOptions& opts = {});

struct CorpusPaths {
  std::filesystem::path manifest;
  std::filesystem::path registration;  // extra speech by the registered speaker
  std::vector<std::filesystem::path> speech;  // clean speech for mixtures
};

// Writes one WAV per speaker plus manifest.csv, registration.wav and
// speech_<k>.wav into `dir`.
CorpusPaths write_corpus(const std::filesystem::path& dir, const FixtureOptions& opts = {});

// Speech by `voice` that is not part of the inventory.
Waveform registration_audio(const FixtureOptions& opts);
Waveform clean_speech(const FixtureOptions& opts, std::size_t index);

}  // namespace phonemask::fixture
