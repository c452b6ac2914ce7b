#include "phonemask/voiceprint.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>

#include "phonemask/dsp.hpp"
#include "phonemask/errors.hpp"

namespace phonemask::voiceprint {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular mel filters over FFT bins: weights[band][bin].
std::vector<std::vector<double>> mel_filterbank(std::size_t bands, std::size_t fft_size,
                                                double rate, double lo_hz, double hi_hz) {
  const std::size_t bins = fft_size / 2 + 1;
  const double mlo = hz_to_mel(lo_hz), mhi = hz_to_mel(hi_hz);
  std::vector<double> edges(bands + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) /
                                   static_cast<double>(bands + 1));
  std::vector<std::vector<double>> fb(bands, std::vector<double>(bins, 0.0));
  for (std::size_t b = 0; b < bands; ++b) {
    const double l = edges[b], c = edges[b + 1], r = edges[b + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * rate / static_cast<double>(fft_size);
      if (f > l && f < r) fb[b][k] = f <= c ? (f - l) / (c - l) : (r - f) / (r - c);
    }
  }
  return fb;
}

}  // namespace

std::vector<double> normalized(std::vector<double> v) {
  double n2 = 0.0;
  for (double x : v) {
    if (!std::isfinite(x)) throw ContractError("voiceprint contains non-finite entries");
    n2 += x * x;
  }
  const double n = std::sqrt(n2);
  if (n < 1e-9) throw ContractError("cannot normalise a zero-norm voiceprint");
  if (std::abs(n - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon()) return v;
  for (double& x : v) x /= n;
  return v;
}

namespace {

// Periodicity test on the frame's autocorrelation (inverse FFT of its power spectrum).
bool is_voiced(const std::vector<dsp::Complex>& spec, const dsp::RealFft& plan, std::size_t min_lag,
               std::size_t max_lag) {
  std::vector<dsp::Complex> power(spec.size());
  for (std::size_t k = 0; k < spec.size(); ++k) power[k] = std::norm(spec[k]);
  const auto r = plan.inverse(power);
  if (!(r[0] > 0.0)) return false;
  double best = 0.0;
  for (std::size_t lag = min_lag; lag <= max_lag; ++lag) best = std::max(best, r[lag] / r[0]);
  return best >= SpectralEmbedder::kVoicingThreshold;
}

}  // namespace

Voiceprint SpectralEmbedder::embed(const Waveform& audio) const {
  if (audio.duration_s() < kMinVoicedSeconds)
    throw ContractError(fmt::format("voiceprint extraction needs >= {:.1f} s of audio, got {:.3f} s",
                                    kMinVoicedSeconds, audio.duration_s()));
  const double rate = audio.sample_rate;
  const auto frame = static_cast<std::size_t>(std::lround(kFrameSeconds * rate));
  const auto hop = static_cast<std::size_t>(std::lround(kHopSeconds * rate));
  const std::size_t nfft = dsp::next_pow2(frame);
  const auto window = dsp::hamming_window(frame);
  const auto bank = mel_filterbank(kBands, nfft, rate, 50.0, std::min(7600.0, 0.45 * rate));
  const auto& plan = dsp::fft(nfft);
  const double floor = db_to_amplitude(kSilenceFloorDbfs);
  const auto min_lag = static_cast<std::size_t>(std::lround(rate / kMaxF0Hz));
  const auto max_lag = std::min(nfft - frame, static_cast<std::size_t>(std::lround(rate / kMinF0Hz)));

  std::vector<double> sum(kBands, 0.0), sum_sq(kBands, 0.0);
  std::size_t used = 0, covered = 0, last_end = 0;
  std::vector<double> buf(frame);
  std::vector<dsp::Complex> spec;
  std::vector<double> logmel(kBands);

  for (std::size_t start = 0; start + frame <= audio.size(); start += hop) {
    const std::span<const double> seg(audio.samples.data() + start, frame);
    if (rms(seg) < floor) continue;
    for (std::size_t i = 0; i < frame; ++i) buf[i] = seg[i] * window[i];
    plan.forward(buf, spec);
    if (!is_voiced(spec, plan, min_lag, max_lag)) continue;
    double level = 0.0;
    for (std::size_t b = 0; b < kBands; ++b) {
      double e = 0.0;
      for (std::size_t k = 0; k < spec.size(); ++k)
        if (bank[b][k] != 0.0) e += bank[b][k] * std::norm(spec[k]);
      logmel[b] = std::log(e + 1e-12);
      level += logmel[b];
    }
    level /= static_cast<double>(kBands);
    for (std::size_t b = 0; b < kBands; ++b) {
      const double v = logmel[b] - level;
      sum[b] += v;
      sum_sq[b] += v * v;
    }
    ++used;
    covered += start + frame - std::max(start, last_end);
    last_end = start + frame;
  }

  if (used == 0) throw ExtractionError("no voiced frames above the silence floor");
  if (static_cast<double>(covered) < kMinVoicedSeconds * rate - static_cast<double>(hop))
    throw ExtractionError(fmt::format("only {:.3f} s of voiced audio; need {:.1f} s",
                                      static_cast<double>(covered) / rate, kMinVoicedSeconds));

  std::vector<double> e(kDimension);
  const double n = static_cast<double>(used);
  for (std::size_t b = 0; b < kBands; ++b) {
    const double m = sum[b] / n;
    e[b] = m;
    e[kBands + b] = std::sqrt(std::max(0.0, sum_sq[b] / n - m * m));
  }
  return Voiceprint{normalized(std::move(e)), audio.duration_s()};
}

Voiceprint embed(const Waveform& audio) { return SpectralEmbedder{}.embed(audio); }

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ContractError(fmt::format("voiceprint dimensions differ ({} vs {})", a.size(), b.size()));
  const double na = std::sqrt(energy(a)), nb = std::sqrt(energy(b));
  if (na == 0.0 || nb == 0.0) throw ContractError("cosine of a zero vector is undefined");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double cosine(const Voiceprint& a, const Voiceprint& b) {
  return cosine(std::span<const double>(a.embedding), std::span<const double>(b.embedding));
}

double distance(const Voiceprint& a, const Voiceprint& b) { return 1.0 - cosine(a, b); }

Gallery build_gallery(const inventory::PhonemeInventory& inv, const Embedder& embedder,
                      GalleryReport* report) {
  Gallery g;
  GalleryReport local;
  for (const auto& speaker : inv.speakers()) {
    try {
      g.emplace(speaker, embedder.embed(inv.speaker_audio(speaker)));
    } catch (const ContractError&) {
      local.skipped.push_back(speaker);
    } catch (const ExtractionError&) {
      local.skipped.push_back(speaker);
    }
  }
  if (report) *report = std::move(local);
  return g;
}

Gallery load_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError(fmt::format("cannot open embedding sidecar {}", path.string()));
  Gallery g;
  std::size_t dim = 0;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (raw.empty() || raw.front() == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto comma = raw.find(',', start);
      fields.push_back(raw.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (fields.size() < 2 || fields[0].empty())
      throw ParseError(fmt::format("line {}: expected speaker_id,v1,...,vD", line), line);
    std::vector<double> v;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      double x = 0.0;
      const auto& f = fields[i];
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), x);
      if (ec != std::errc() || ptr != f.data() + f.size())
        throw ParseError(fmt::format("line {}: bad component '{}'", line, f), line);
      v.push_back(x);
    }
    if (dim == 0) dim = v.size();
    if (v.size() != dim)
      throw ParseError(fmt::format("line {}: dimension {} differs from {}", line, v.size(), dim),
                       line);
    try {
      g[fields[0]] = Voiceprint{normalized(std::move(v)), 0.0};
    } catch (const ContractError& e) {
      throw ParseError(fmt::format("line {}: {}", line, e.what()), line);
    }
  }
  return g;
}

void save_sidecar(const std::filesystem::path& path, const Gallery& gallery) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  for (const auto& [id, vp] : gallery) {
    out << id;
    for (double x : vp.embedding) out << ',' << fmt::format("{:.17g}", x);
    out << '\n';
  }
}

SpeakerProfile match(const Voiceprint& representative, const Gallery& gallery) {
  if (gallery.empty()) throw RegistrationError("no dataset speakers available for matching");
  SpeakerProfile p;
  p.representative = representative;
  double best = -std::numeric_limits<double>::infinity();
  // Gallery iterates in ascending id order, so strict '>' keeps the smallest id on ties.
  for (const auto& [id, vp] : gallery) {
    const double c = cosine(representative, vp);
    if (c > best) {
      best = c;
      p.matched_speaker_id = id;
    }
  }
  p.matched_cosine = best;
  return p;
}

namespace {

Waveform concatenate(const std::vector<Waveform>& samples) {
  if (samples.empty()) throw ContractError("registration needs at least one recording");
  Waveform all{{}, samples.front().sample_rate};
  for (const auto& w : samples) {
    if (std::abs(w.sample_rate - all.sample_rate) > 1e-9)
      throw ContractError("registration recordings must share one sample rate");
    all.samples.insert(all.samples.end(), w.samples.begin(), w.samples.end());
  }
  return all;
}

std::string short_warning(double seconds, double min_s) {
  return fmt::format("registration audio is {:.2f} s; at least {:.1f} s is recommended", seconds,
                     min_s);
}

}  // namespace

SpeakerProfile register_single(const std::vector<Waveform>& samples, const Gallery& gallery,
                               const Embedder& embedder, const RegistrationOptions& opts) {
  if (gallery.empty()) throw RegistrationError("inventory has no embeddable speakers");
  const Waveform user = concatenate(samples);
  auto profile = match(embedder.embed(user), gallery);
  if (user.duration_s() < opts.min_duration_s)
    profile.warnings.push_back(short_warning(user.duration_s(), opts.min_duration_s));
  return profile;
}

SpeakerProfile register_single(const std::vector<Waveform>& samples,
                               const inventory::PhonemeInventory& inv,
                               const RegistrationOptions& opts) {
  if (inv.empty()) throw RegistrationError("inventory is empty");
  SpectralEmbedder embedder;
  return register_single(samples, build_gallery(inv, embedder), embedder, opts);
}

SpeakerProfile register_group(const std::vector<Voiceprint>& members, const Gallery& gallery) {
  if (members.size() < 2) throw ContractError("group registration needs at least two users");
  const std::size_t dim = members.front().dimension();
  // Running mean: exact when all members are identical.
  std::vector<double> mean(dim, 0.0);
  double total_s = 0.0;
  for (std::size_t k = 0; k < members.size(); ++k) {
    if (members[k].dimension() != dim) throw ContractError("member voiceprints differ in dimension");
    for (std::size_t i = 0; i < dim; ++i)
      mean[i] += (members[k].embedding[i] - mean[i]) / static_cast<double>(k + 1);
    total_s += members[k].source_duration_s;
  }
  if (std::sqrt(energy(mean)) < 1e-6)
    throw RegistrationError("group voiceprints cancel out (near-zero mean); cannot register");
  auto profile = match(Voiceprint{normalized(std::move(mean)), total_s}, gallery);
  profile.member_count = members.size();
  return profile;
}

SpeakerProfile register_group(const std::vector<std::vector<Waveform>>& users,
                              const Gallery& gallery, const Embedder& embedder,
                              const RegistrationOptions& opts) {
  if (users.size() < 2) throw ContractError("group registration needs at least two users");
  if (gallery.empty()) throw RegistrationError("inventory has no embeddable speakers");
  std::vector<Voiceprint> members;
  std::vector<std::string> warnings;
  for (std::size_t u = 0; u < users.size(); ++u) {
    const Waveform audio = concatenate(users[u]);
    if (audio.duration_s() < opts.min_duration_s)
      warnings.push_back(fmt::format("user {}: {}", u, short_warning(audio.duration_s(),
                                                                     opts.min_duration_s)));
    members.push_back(embedder.embed(audio));
  }
  auto profile = register_group(members, gallery);
  profile.warnings = std::move(warnings);
  return profile;
}

SpeakerProfile register_group(const std::vector<std::vector<Waveform>>& users,
                              const inventory::PhonemeInventory& inv,
                              const RegistrationOptions& opts) {
  if (inv.empty()) throw RegistrationError("inventory is empty");
  SpectralEmbedder embedder;
  return register_group(users, build_gallery(inv, embedder), embedder, opts);
}

}  // namespace phonemask::voiceprint
