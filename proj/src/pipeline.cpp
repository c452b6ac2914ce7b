#include "phonemask/pipeline.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fcntl.h>
#include <fmt/format.h>
#include <json.hpp>
#include <unistd.h>

#include "phonemask/digest.hpp"
#include "phonemask/dsp.hpp"
#include "phonemask/errors.hpp"
#include "phonemask/inventory.hpp"
#include "phonemask/voiceprint.hpp"
#include "phonemask/wer.hpp"

namespace phonemask::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Ingest: return "ingest";
    case Stage::Register: return "register";
    case Stage::Synth: return "synth";
    case Stage::Modulate: return "modulate";
    case Stage::Simulate: return "simulate";
    case Stage::Mix: return "mix";
    case Stage::Recover: return "recover";
    case Stage::Report: return "report";
  }
  return "?";
}

Stage parse_stage(std::string_view text) {
  for (auto s : kStages)
    if (to_string(s) == text) return s;
  throw ConfigError(fmt::format("unknown stage '{}' (expected one of ingest, register, synth, "
                                "modulate, simulate, mix, recover, report)",
                                text));
}

StageRange StageRange::parse(std::string_view text) {
  if (text.empty()) return {};
  const auto dots = text.find("..");
  StageRange r;
  if (dots == std::string_view::npos) {
    r.first = r.last = parse_stage(text);
  } else {
    const auto a = text.substr(0, dots), b = text.substr(dots + 2);
    r.first = a.empty() ? Stage::Ingest : parse_stage(a);
    r.last = b.empty() ? Stage::Report : parse_stage(b);
  }
  if (r.last < r.first)
    throw ConfigError(fmt::format("stage range '{}' runs backwards", text));
  return r;
}

std::vector<std::string> stage_inputs(Stage s) {
  using namespace artifact;
  switch (s) {
    case Stage::Ingest: return {};
    case Stage::Register: return {kInventory};
    case Stage::Synth: return {kInventory, kProfile};
    case Stage::Modulate: return {kNoise};
    case Stage::Simulate: return {kModulated, kModulatedMeta};
    case Stage::Mix: return {kDemodNoise, kSimulateMeta};
    case Stage::Recover: return {kRecording, kMixMeta, kNoiseLog, kInventory, kProfile};
    case Stage::Report: return {kRecoveryReport, kMixMeta, kInventory, kProfile, kNoise, kRecording, kRecovered};
  }
  return {};
}

std::vector<std::string> stage_outputs(Stage s) {
  using namespace artifact;
  switch (s) {
    case Stage::Ingest: return {kInventory};
    case Stage::Register: return {kProfile};
    case Stage::Synth: return {kNoise, kNoiseLog};
    case Stage::Modulate: return {kModulated, kModulatedMeta};
    case Stage::Simulate: return {kDemodNoise, kSimulateMeta};
    case Stage::Mix: return {kRecording, kMixMeta};
    case Stage::Recover: return {kRecovered, kRecoveryReport};
    case Stage::Report: return {kReport, kReportCsv};
  }
  return {};
}

namespace {

Stage producer_of(const std::string& name) {
  for (auto s : kStages) {
    const auto outs = stage_outputs(s);
    if (std::find(outs.begin(), outs.end(), name) != outs.end()) return s;
  }
  return Stage::Ingest;
}

}  // namespace

RunLock::RunLock(const fs::path& dir) : path_(dir / artifact::kLock) {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    const std::string why = errno == EEXIST ? "another run holds it (delete .lock if it is stale)"
                                            : std::strerror(errno);
    throw StageError("lock", fmt::format("cannot lock {}: {}", dir.string(), why));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError(fmt::format("cannot open {}", path.string()));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()), 0);
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << j.dump(2) << '\n';
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError(fmt::format("cannot open {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError(fmt::format("cannot open {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

Waveform read_baseband(const fs::path& path) {
  return dsp::resample_to(read_wav(path), kBasebandRate);
}

struct Context {
  const PipelineConfig& cfg;
  fs::path out;
  std::string config_digest;

  fs::path at(const char* name) const { return out / name; }
};

// ---- shared loaders ---------------------------------------------------------------------

inventory::PhonemeInventory load_inventory(const Context& ctx, inventory::LoadReport* report = nullptr) {
  if (ctx.cfg.input.manifest.empty()) throw ConfigError("input.manifest is not set");
  const auto classifier = ctx.cfg.input.classifier.empty()
                              ? inventory::PhonemeClassifier::standard()
                              : inventory::PhonemeClassifier::from_file(ctx.cfg.input.classifier);
  return inventory::load_manifest(ctx.cfg.input.manifest, classifier, report);
}

// Reloads the inventory and checks it is the one ingested earlier.
inventory::PhonemeInventory checked_inventory(const Context& ctx) {
  auto inv = load_inventory(ctx);
  const auto recorded = read_json(ctx.at(artifact::kInventory)).at("inventory_digest").get<std::string>();
  if (inv.digest() != recorded)
    throw IngestError("the phoneme inventory changed since the ingest stage; rerun ingest");
  return inv;
}

json profile_json(const voiceprint::SpeakerProfile& p) {
  return {{"matched_speaker_id", p.matched_speaker_id},
          {"matched_cosine", p.matched_cosine},
          {"member_count", p.member_count},
          {"warnings", p.warnings},
          {"embedding", p.representative.embedding},
          {"source_duration_s", p.representative.source_duration_s}};
}

voiceprint::SpeakerProfile load_profile(const Context& ctx) {
  const auto j = read_json(ctx.at(artifact::kProfile));
  voiceprint::SpeakerProfile p;
  p.matched_speaker_id = j.at("matched_speaker_id").get<std::string>();
  p.matched_cosine = j.at("matched_cosine").get<double>();
  p.member_count = j.at("member_count").get<std::size_t>();
  p.warnings = j.at("warnings").get<std::vector<std::string>>();
  p.representative.embedding = j.at("embedding").get<std::vector<double>>();
  p.representative.source_duration_s = j.at("source_duration_s").get<double>();
  return p;
}

txchain::CompensationFilter precomp_filter(const PipelineConfig& cfg) {
  const auto& p = cfg.precomp;
  const auto equiv = p.fr_equiv.empty() ? txchain::FrequencyResponse::flat()
                                        : txchain::FrequencyResponse::load(p.fr_equiv);
  const auto rx = p.fr_rx.empty() ? txchain::FrequencyResponse::flat()
                                  : txchain::FrequencyResponse::load(p.fr_rx);
  return txchain::design_precompensation(equiv, rx, p.options);
}

// The noise the transmitter emits (after optional pre-compensation).
Waveform transmitted_noise(const PipelineConfig& cfg, const Waveform& noise) {
  if (!cfg.precomp.enabled) return noise;
  return txchain::equalize(noise, precomp_filter(cfg));
}

Waveform recovery_reference(const PipelineConfig& cfg, const Waveform& noise) {
  return recover::make_reference(transmitted_noise(cfg, noise), cfg.recovery.reference,
                                 cfg.modulation.options, cfg.channel.mic, cfg.modulation.ultrasonic_rate);
}

Waveform load_speech(const std::string& path) {
  if (path.empty()) throw ConfigError("input.speech is not set");
  return read_baseband(path);
}

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t stream) { return Rng(seed).derive(stream).next(); }

// ---- stages --------------------------------------------------------------------------

void stage_ingest(const Context& ctx) {
  inventory::LoadReport report;
  const auto inv = load_inventory(ctx, &report);
  json speakers = json::object();
  for (const auto& s : inv.speakers())
    speakers[s] = {{"vowels", inv.count(s, inventory::PhonemeClass::Vowel)},
                   {"consonants", inv.count(s, inventory::PhonemeClass::Consonant)}};
  write_json(ctx.at(artifact::kInventory), {{"config_digest", ctx.config_digest},
                                            {"inventory_digest", inv.digest()},
                                            {"clips", inv.size()},
                                            {"entries", report.entries},
                                            {"skipped_short", report.skipped_short},
                                            {"sample_rate", inv.sample_rate()},
                                            {"speakers", speakers}});
}

void stage_register(const Context& ctx) {
  const auto inv = checked_inventory(ctx);
  const auto& in = ctx.cfg.input;
  if (in.registration.empty()) throw ConfigError("input.registration lists no registration audio");
  const voiceprint::SpectralEmbedder embedder;
  const auto gallery = in.gallery.empty() ? voiceprint::build_gallery(inv, embedder)
                                          : voiceprint::load_sidecar(in.gallery);
  voiceprint::SpeakerProfile profile;
  if (in.registration.size() == 1) {
    profile = voiceprint::register_single({read_baseband(in.registration[0])}, gallery, embedder);
  } else {
    std::vector<std::vector<Waveform>> users;
    for (const auto& p : in.registration) users.push_back({read_baseband(p)});
    profile = voiceprint::register_group(users, gallery, embedder);
  }
  auto j = profile_json(profile);
  j["config_digest"] = ctx.config_digest;
  write_json(ctx.at(artifact::kProfile), j);
}

void stage_synth(const Context& ctx) {
  const auto inv = checked_inventory(ctx);
  const auto profile = load_profile(ctx);
  std::optional<std::string> ts;
  if (!ctx.cfg.timestamp.empty()) ts = ctx.cfg.timestamp;
  auto noise = synth::synthesize_noise(inv, profile, ctx.cfg.synth_config(), ts);
  write_wav(ctx.at(artifact::kNoise), noise.waveform);
  noise.log.waveform_path = artifact::kNoise;
  fs::remove(ctx.at(artifact::kNoiseLog));
  synth::write_noise_log(ctx.at(artifact::kNoiseLog), noise.log);
}

void stage_modulate(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto noise = read_baseband(ctx.at(artifact::kNoise));
  json pre = {{"enabled", cfg.precomp.enabled}};
  Waveform emitted = noise;
  if (cfg.precomp.enabled) {
    const auto filter = precomp_filter(cfg);
    emitted = txchain::equalize(noise, filter);
    pre["warnings"] = filter.warnings;
    pre["taps"] = filter.fir_taps.size();
  }
  const auto mod = txchain::modulate(txchain::to_ultrasonic(emitted, cfg.modulation.ultrasonic_rate),
                                     cfg.modulation.options);
  write_wav(ctx.at(artifact::kModulated), mod.sideband);
  write_json(ctx.at(artifact::kModulatedMeta), {{"config_digest", ctx.config_digest},
                                                {"carrier_hz", mod.carrier_hz},
                                                {"scheme", std::string(txchain::to_string(mod.scheme))},
                                                {"includes_carrier", mod.includes_carrier},
                                                {"carrier_amplitude", mod.carrier_amplitude},
                                                {"sample_rate", mod.sideband.sample_rate},
                                                {"precomp", pre}});
}

void stage_simulate(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto meta = read_json(ctx.at(artifact::kModulatedMeta));
  txchain::ModulatedSignal mod;
  mod.sideband = read_wav(ctx.at(artifact::kModulated));
  mod.carrier_hz = meta.at("carrier_hz").get<double>();
  mod.scheme = txchain::parse_scheme(meta.at("scheme").get<std::string>());
  mod.includes_carrier = meta.at("includes_carrier").get<bool>();
  mod.carrier_amplitude = meta.at("carrier_amplitude").get<double>();

  auto mic = cfg.channel.mic;
  mic.noise_seed = derived_seed(cfg.seed, 20);
  const auto demod = channel::inject(mod, mic);

  std::string cir_id;
  Waveform cir;
  Rng rng = Rng(cfg.seed).derive(21);
  if (!cfg.channel.cir_dir.empty()) {
    auto cirs = channel::load_cir_directory(cfg.channel.cir_dir);
    auto& pick = cirs[rng.index(cirs.size())];
    cir_id = pick.id;
    cir = std::move(pick.cir);
  } else {
    cir = channel::synthetic_cir(cfg.channel.synthetic_cir, rng);
    cir_id = "synthetic";
  }
  auto at_mic = channel::apply_cir(demod, cir);
  at_mic.samples.resize(demod.size());
  write_wav(ctx.at(artifact::kDemodNoise), at_mic);
  write_json(ctx.at(artifact::kSimulateMeta),
             {{"config_digest", ctx.config_digest}, {"cir_id", cir_id}, {"cir_length", cir.size()}});
}

channel::Recording mix_recording(const PipelineConfig& cfg, const Waveform& speech, const Waveform& noise,
                                 double snr_db, const std::string& cir_id) {
  channel::MixOptions opts;
  opts.snr_db = snr_db;
  opts.shift_samples = cfg.mix.shift_samples;
  opts.ambient_dbfs = cfg.mix.ambient_dbfs;
  opts.ambient_seed = derived_seed(cfg.seed, 30);
  opts.cir_id = cir_id;
  opts.speech_path = cfg.input.speech;
  opts.noise_log_ref = artifact::kNoiseLog;
  return channel::mix_at_snr(speech, noise, opts);
}

void stage_mix(const Context& ctx) {
  const auto speech = load_speech(ctx.cfg.input.speech);
  const auto noise = read_wav(ctx.at(artifact::kDemodNoise));
  const auto cir_id = read_json(ctx.at(artifact::kSimulateMeta)).at("cir_id").get<std::string>();
  const auto rec = mix_recording(ctx.cfg, speech, noise, ctx.cfg.mix.snr_db, cir_id);
  write_wav(ctx.at(artifact::kRecording), rec.samples);
  std::ofstream(ctx.at(artifact::kMixMeta)) << rec.truth.to_json() << '\n';
}

Waveform replay_noise(const Context& ctx) {
  const auto inv = checked_inventory(ctx);
  const auto profile = load_profile(ctx);
  const auto log = synth::read_noise_log(ctx.at(artifact::kNoiseLog));
  return synth::replay(log, inv, profile, ctx.cfg.synth_config());
}

recover::RecoveryReport recover_and_score(const PipelineConfig& cfg, const Waveform& recording,
                                          const Waveform& reference, const Waveform& speech,
                                          Waveform* recovered) {
  const auto res = recover::cancel(recording, reference, cfg.recovery);
  recover::RecoveryReport r;
  r.lag = res.lag;
  r.aligned = res.aligned;
  r.converged = res.converged;
  r.si_snr_before = recover::si_snr(recording, speech);
  r.si_snr_after = recover::si_snr(res.recovered, speech);
  if (recovered) *recovered = res.recovered;
  return r;
}

void stage_recover(const Context& ctx) {
  const auto recording = read_wav(ctx.at(artifact::kRecording));
  const auto truth = channel::MixMetadata::from_json(read_text(ctx.at(artifact::kMixMeta)));
  const auto reference = recovery_reference(ctx.cfg, replay_noise(ctx));
  const auto speech = load_speech(truth.speech_path);
  Waveform recovered;
  const auto report = recover_and_score(ctx.cfg, recording, reference, speech, &recovered);
  write_wav(ctx.at(artifact::kRecovered), recovered);
  std::ofstream(ctx.at(artifact::kRecoveryReport)) << report.to_json_line() << '\n';
}

json report_body(const Context& ctx) {
  const auto inv_meta = read_json(ctx.at(artifact::kInventory));
  const auto profile = read_json(ctx.at(artifact::kProfile));
  const auto truth = channel::MixMetadata::from_json(read_text(ctx.at(artifact::kMixMeta)));
  std::string line;
  {
    std::ifstream in(ctx.at(artifact::kRecoveryReport));
    std::getline(in, line);
  }
  const auto rec = json::parse(line);
  json body = {{"config_digest", ctx.config_digest},
               {"seed", ctx.cfg.seed},
               {"inventory_digest", inv_meta.at("inventory_digest")},
               {"matched_speaker_id", profile.at("matched_speaker_id")},
               {"noise_sha256", file_digest(ctx.at(artifact::kNoise))},
               {"recording_sha256", file_digest(ctx.at(artifact::kRecording))},
               {"snr_db_target", std::isinf(truth.snr_db_target) ? json(nullptr) : json(truth.snr_db_target)},
               {"shift_samples", truth.shift_samples},
               {"cir_id", truth.cir_id},
               {"lag", rec.at("lag")},
               {"aligned", rec.at("aligned")},
               {"converged", rec.at("converged")},
               {"si_snr_before", rec.at("si_snr_before")},
               {"si_snr_after", rec.at("si_snr_after")}};

  if (ctx.cfg.asr.kind != "none" && !ctx.cfg.input.transcript.empty()) {
    auto client = asr::make_client(ctx.cfg.asr);
    const auto ref_tokens = tokenize(read_text(ctx.cfg.input.transcript));
    body["wer_before"] = wer(ref_tokens, client->transcribe(read_wav(ctx.at(artifact::kRecording))));
    body["wer_after"] = wer(ref_tokens, client->transcribe(read_wav(ctx.at(artifact::kRecovered))));
  }
  return body;
}

std::string report_digest_of(json body) {
  body.erase("report_digest");
  return sha256_hex(body.dump());
}

void stage_report(const Context& ctx) {
  auto body = report_body(ctx);
  body["report_digest"] = report_digest_of(body);
  write_json(ctx.at(artifact::kReport), body);
  std::ofstream csv(ctx.at(artifact::kReportCsv));
  csv << "config_digest,seed,snr_db_target,lag,aligned,converged,si_snr_before,si_snr_after,report_digest\n";
  csv << fmt::format("{},{},{},{},{},{},{},{},{}\n", ctx.config_digest, ctx.cfg.seed,
                     body["snr_db_target"].dump(), body["lag"].dump(), body["aligned"].dump(),
                     body["converged"].dump(), body["si_snr_before"].dump(), body["si_snr_after"].dump(),
                     body["report_digest"].get<std::string>());
}

void record_artifacts(const Context& ctx, Stage s) {
  const auto path = ctx.at(artifact::kManifest);
  json manifest = fs::exists(path) ? read_json(path) : json::object();
  for (const auto& name : stage_outputs(s))
    manifest[name] = {{"stage", std::string(to_string(s))},
                      {"config_digest", ctx.config_digest},
                      {"sha256", file_digest(ctx.out / name)}};
  write_json(path, manifest);
}

void run_stage(const Context& ctx, Stage s) {
  switch (s) {
    case Stage::Ingest: stage_ingest(ctx); break;
    case Stage::Register: stage_register(ctx); break;
    case Stage::Synth: stage_synth(ctx); break;
    case Stage::Modulate: stage_modulate(ctx); break;
    case Stage::Simulate: stage_simulate(ctx); break;
    case Stage::Mix: stage_mix(ctx); break;
    case Stage::Recover: stage_recover(ctx); break;
    case Stage::Report: stage_report(ctx); break;
  }
}

void check_dependencies(const Context& ctx, StageRange range) {
  std::set<std::string> available;
  for (auto s : kStages) {
    if (s < range.first || s > range.last) continue;
    std::vector<std::string> missing;
    for (const auto& name : stage_inputs(s))
      if (!available.count(name) && !fs::exists(ctx.out / name))
        missing.push_back(fmt::format("{} (written by the {} stage)", name, to_string(producer_of(name))));
    if (!missing.empty()) {
      std::string list;
      for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
      throw StageError(std::string(to_string(s)), fmt::format("missing artifact {}", list));
    }
    for (const auto& name : stage_outputs(s)) available.insert(name);
  }
}

}  // namespace

RunResult run_pipeline(const PipelineConfig& cfg, const fs::path& out_dir, StageRange range) {
  cfg.validate();
  const RunLock lock(out_dir);
  const Context ctx{cfg, out_dir, cfg.digest()};
  check_dependencies(ctx, range);

  RunResult result;
  for (auto s : kStages) {
    if (s < range.first || s > range.last) continue;
    try {
      run_stage(ctx, s);
      record_artifacts(ctx, s);
    } catch (const ConfigError&) {
      throw;
    } catch (const ExternalError&) {
      throw;
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(std::string(to_string(s)), e.what());
    }
    result.executed.push_back(s);
  }
  if (range.last == Stage::Report) result.report_digest = read_report_digest(out_dir);
  return result;
}

std::vector<SweepRow> run_sweep(const PipelineConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const RunLock lock(out_dir);
  const Context ctx{cfg, out_dir, cfg.digest()};
  for (const char* name : {artifact::kDemodNoise, artifact::kSimulateMeta, artifact::kNoiseLog,
                           artifact::kInventory, artifact::kProfile})
    if (!fs::exists(ctx.at(name)))
      throw StageError("sweep", fmt::format("missing artifact {} (written by the {} stage)", name,
                                            to_string(producer_of(name))));
  std::vector<SweepRow> rows;
  try {
    const auto speech = load_speech(cfg.input.speech);
    const auto noise = read_wav(ctx.at(artifact::kDemodNoise));
    const auto cir_id = read_json(ctx.at(artifact::kSimulateMeta)).at("cir_id").get<std::string>();
    const auto reference = recovery_reference(cfg, replay_noise(ctx));
    for (double snr : cfg.mix.sweep_snr_db) {
      const auto rec = mix_recording(cfg, speech, noise, snr, cir_id);
      const auto r = recover_and_score(cfg, rec.samples, reference, speech, nullptr);
      rows.push_back({snr, r.lag, r.aligned, r.converged, r.si_snr_before, r.si_snr_after});
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("sweep", e.what());
  }
  std::ofstream csv(ctx.at(artifact::kSweep));
  csv << "snr_db,lag,aligned,converged,si_snr_before,si_snr_after\n";
  for (const auto& r : rows)
    csv << fmt::format("{},{},{},{},{:.4f},{:.4f}\n", r.snr_db, r.lag, r.aligned, r.converged,
                       r.si_snr_before, r.si_snr_after);
  return rows;
}

std::string read_report_digest(const fs::path& out_dir) {
  const auto body = read_json(out_dir / artifact::kReport);
  const auto digest = report_digest_of(body);
  if (body.value("report_digest", std::string()) != digest)
    throw IngestError(fmt::format("{} was modified after it was written", (out_dir / artifact::kReport).string()));
  return digest;
}

}  // namespace phonemask::pipeline
