#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "phonemask/config.hpp"

namespace phonemask::pipeline {

enum class Stage { Ingest, Register, Synth, Modulate, Simulate, Mix, Recover, Report };
inline constexpr std::array<Stage, 8> kStages{Stage::Ingest,   Stage::Register, Stage::Synth,
                                              Stage::Modulate, Stage::Simulate, Stage::Mix,
                                              Stage::Recover,  Stage::Report};

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view text);

struct StageRange {
  Stage first = Stage::Ingest;
  Stage last = Stage::Report;
  // "mix..recover", "synth" or "" (everything).
  static StageRange parse(std::string_view text);
};

// Artifact file names inside the output directory.
namespace artifact {
inline constexpr const char* kInventory = "inventory.json";
inline constexpr const char* kProfile = "profile.json";
inline constexpr const char* kNoise = "noise.wav";
inline constexpr const char* kNoiseLog = "noise_log.csv";
inline constexpr const char* kModulated = "modulated.wav";
inline constexpr const char* kModulatedMeta = "modulated.json";
inline constexpr const char* kDemodNoise = "demod_noise.wav";
inline constexpr const char* kSimulateMeta = "simulate.json";
inline constexpr const char* kRecording = "recording.wav";
inline constexpr const char* kMixMeta = "mix.json";
inline constexpr const char* kRecovered = "recovered.wav";
inline constexpr const char* kRecoveryReport = "recovery.jsonl";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kReportCsv = "report.csv";
inline constexpr const char* kSweep = "sweep.csv";
inline constexpr const char* kManifest = "artifacts.json";
inline constexpr const char* kLock = ".lock";
}  // namespace artifact

// Artifacts a stage reads / writes.
std::vector<std::string> stage_inputs(Stage s);
std::vector<std::string> stage_outputs(Stage s);

// Exclusive ownership of an output directory for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct RunResult {
  std::vector<Stage> executed;
  std::string report_digest;  // set when the report stage ran
};

// Runs the stages in `range` in order. Missing prior-stage artifacts are
// reported before anything runs; a failing stage raises StageError naming
// it and leaves earlier artifacts in place. ConfigError and ExternalError
// pass through unchanged.
RunResult run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out_dir,
                       StageRange range = {});

struct SweepRow {
  double snr_db = 0.0;
  std::int64_t lag = 0;
  bool aligned = false;
  bool converged = false;
  double si_snr_before = 0.0;
  double si_snr_after = 0.0;
};

// Mix/recover/score at every cfg.mix.sweep_snr_db value using the artifacts
// of a previous run up to `simulate`; writes sweep.csv.
std::vector<SweepRow> run_sweep(const PipelineConfig& cfg, const std::filesystem::path& out_dir);

// The report's digest field, recomputed from report.json.
std::string read_report_digest(const std::filesystem::path& out_dir);

}  // namespace phonemask::pipeline
