#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "phonemask/channel.hpp"
#include "phonemask/config.hpp"
#include "phonemask/errors.hpp"
#include "phonemask/fixture.hpp"
#include "phonemask/pipeline.hpp"
#include "phonemask/wer.hpp"

namespace fs = std::filesystem;
using namespace phonemask;

namespace {

enum Exit { kOk = 0, kConfig = 2, kStage = 3, kExternal = 4 };

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open {}", path));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PipelineConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
  auto cfg = path.empty() ? PipelineConfig{} : PipelineConfig::load(path);
  if (seed) cfg.seed = *seed;
  return cfg;
}

void print_result(const pipeline::RunResult& r) {
  for (auto s : r.executed) fmt::print("done {}\n", pipeline::to_string(s));
  if (!r.report_digest.empty()) fmt::print("report_digest {}\n", r.report_digest);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"phoneme-based ultrasonic jamming noise: synthesis, transmission and recovery"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "pipeline config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("-o,--out", out_dir, "output directory")->capture_default_str();
    sub->add_option("--seed", seed, "override the config seed");
  };

  std::vector<std::pair<CLI::App*, pipeline::Stage>> stage_cmds;
  const std::map<pipeline::Stage, std::string> help{
      {pipeline::Stage::Ingest, "load the phoneme manifest into an inventory"},
      {pipeline::Stage::Register, "match registration audio to a corpus speaker"},
      {pipeline::Stage::Synth, "synthesise the jamming noise and its log"},
      {pipeline::Stage::Modulate, "pre-compensate and modulate onto the carrier"},
      {pipeline::Stage::Simulate, "microphone nonlinearity and room response"},
      {pipeline::Stage::Mix, "mix the demodulated noise with clean speech"},
      {pipeline::Stage::Recover, "cancel the noise using the logged reference"},
      {pipeline::Stage::Report, "write report.json and report.csv"}};
  for (auto s : pipeline::kStages) {
    auto* sub = app.add_subcommand(std::string(pipeline::to_string(s)), help.at(s));
    add_common(sub);
    stage_cmds.emplace_back(sub, s);
  }

  auto* run = app.add_subcommand("run", "run a range of stages");
  add_common(run);
  std::string stages;
  run->add_option("--stages", stages, "range such as mix..recover; default all");

  auto* sweep = app.add_subcommand("sweep", "mix/recover/score over mix.sweep_snr_db; writes sweep.csv");
  add_common(sweep);

  auto* wer_cmd = app.add_subcommand("wer", "word error rate between two transcripts");
  std::string ref_path, hyp_path;
  wer_cmd->add_option("reference", ref_path)->required()->check(CLI::ExistingFile);
  wer_cmd->add_option("hypothesis", hyp_path)->required()->check(CLI::ExistingFile);

  auto* field = app.add_subcommand("field", "ultrasonic field map and exposure check");
  add_common(field);
  std::string layout = "hexagonal";
  channel::GridSpec grid;
  std::string csv_path;
  field->add_option("--layout", layout, "single or hexagonal")
      ->check(CLI::IsMember({"single", "hexagonal"}))
      ->capture_default_str();
  field->add_option("--step", grid.step, "grid step in metres")->capture_default_str();
  field->add_option("--extent", grid.x_max, "half-width of the square grid in metres")->capture_default_str();
  field->add_option("--csv", csv_path, "write the map as CSV");

  auto* fix = app.add_subcommand("fixture", "write a synthetic corpus and a config that uses it");
  std::string fixture_dir;
  fixture::FixtureOptions fopts;
  fix->add_option("dir", fixture_dir)->required();
  fix->add_option("--speakers", fopts.speakers)->capture_default_str();
  fix->add_option("--fixture-seed", fopts.seed)->capture_default_str();

  auto* init = app.add_subcommand("init-config", "print the default config");

  CLI11_PARSE(app, argc, argv);

  try {
    for (auto& [sub, s] : stage_cmds) {
      if (!sub->parsed()) continue;
      print_result(pipeline::run_pipeline(load_config(config_path, seed), out_dir, {s, s}));
      return kOk;
    }
    if (run->parsed()) {
      print_result(pipeline::run_pipeline(load_config(config_path, seed), out_dir,
                                          pipeline::StageRange::parse(stages)));
    } else if (sweep->parsed()) {
      fmt::print("snr_db,lag,aligned,converged,si_snr_before,si_snr_after\n");
      for (const auto& r : pipeline::run_sweep(load_config(config_path, seed), out_dir))
        fmt::print("{},{},{},{},{:.3f},{:.3f}\n", r.snr_db, r.lag, r.aligned, r.converged, r.si_snr_before,
                   r.si_snr_after);
    } else if (wer_cmd->parsed()) {
      const auto ref = tokenize(slurp(ref_path));
      const auto hyp = tokenize(slurp(hyp_path));
      const auto c = edit_counts(ref, hyp);
      fmt::print("wer {:.4f} substitutions {} deletions {} insertions {} reference_words {}\n", wer(ref, hyp),
                 c.substitutions, c.deletions, c.insertions, ref.size());
    } else if (field->parsed()) {
      const auto cfg = load_config(config_path, seed);
      const auto array = layout == "single"
                             ? channel::ArrayLayout::single_pair()
                             : channel::ArrayLayout::hexagonal(cfg.channel.array_radius_m,
                                                               cfg.channel.array_tilt_deg);
      grid.x_min = grid.y_min = -grid.x_max;
      grid.y_max = grid.x_max;
      const auto map = channel::compute_field_map(array, cfg.channel.transducer, grid);
      if (!csv_path.empty()) map.write_csv(csv_path);
      const auto violations = channel::check_exposure(map);
      fmt::print("points {} skipped_near_elements {} violations {}\n", map.samples.size(),
                 map.skipped_near_elements, violations.size());
      fmt::print("beamwidth_deg {:.1f}\n", channel::demod_beamwidth(array, cfg.channel.transducer, 1.0));
      for (const auto& v : violations) fmt::print("over {:.3f} {:.3f} {:.1f} dB\n", v.x, v.y, v.spl);
    } else if (fix->parsed()) {
      const auto paths = fixture::write_corpus(fixture_dir, fopts);
      PipelineConfig cfg;
      cfg.input.manifest = fs::absolute(paths.manifest).string();
      cfg.input.registration = {fs::absolute(paths.registration).string()};
      cfg.input.speech = fs::absolute(paths.speech.front()).string();
      cfg.synth.duration_s = 8.0;
      const auto cfg_path = fs::path(fixture_dir) / "config.json";
      cfg.save(cfg_path);
      fmt::print("manifest {}\nconfig {}\n", paths.manifest.string(), cfg_path.string());
    } else if (init->parsed()) {
      fmt::print("{}\n", PipelineConfig{}.dump(2));
    }
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kConfig;
  } catch (const ExternalError& e) {
    fmt::print(stderr, "external service error: {}\n", e.what());
    return kExternal;
  } catch (const StageError& e) {
    fmt::print(stderr, "stage {} failed: {}\n", e.stage(), e.what());
    return kStage;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kStage;
  }
  return kOk;
}
