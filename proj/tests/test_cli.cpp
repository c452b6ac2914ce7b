#include <doctest.h>

#include <chrono>
#include <fstream>
#include <httplib.h>
#include <json.hpp>
#include <sys/wait.h>
#include <thread>

#include "oracles.hpp"
#include "phonemask/asr.hpp"
#include "phonemask/config.hpp"
#include "phonemask/errors.hpp"
#include "phonemask/fixture.hpp"
#include "phonemask/pipeline.hpp"
#include "phonemask/wer.hpp"

using namespace phonemask;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> words(std::string_view s) { return tokenize(s); }

PipelineConfig fixture_config(const fs::path& dir) {
  fixture::FixtureOptions o;
  o.speech_clips = 1;
  const auto paths = fixture::write_corpus(dir, o);
  PipelineConfig cfg;
  cfg.seed = 1234;
  cfg.input.manifest = paths.manifest.string();
  cfg.input.registration = {paths.registration.string()};
  cfg.input.speech = paths.speech.front().string();
  cfg.synth.duration_s = 9.0;
  cfg.mix.shift_samples = 7000;
  return cfg;
}

class Server {
 public:
  explicit Server(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/asr", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~Server() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/asr"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

asr::AsrConfig http_config(const std::string& url, double timeout = 5.0) {
  asr::AsrConfig c;
  c.kind = "http";
  c.endpoint = url;
  c.timeout_s = timeout;
  return c;
}

const Waveform& short_audio() {
  static const Waveform w{std::vector<double>(4800, 0.01), 48000};
  return w;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(PHONEMASK_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("word error rate") {
  CHECK(wer(words("a b c d"), words("a b c d")) == 0.0);
  CHECK(wer(words("one two three four five"), {}) == 1.0);
  CHECK(wer(words("a b c"), words("a x c")) == doctest::Approx(1.0 / 3));
  CHECK(wer(words("a b"), words("a b c d")) == 1.0);
  const auto c = edit_counts(words("the cat sat on the mat"), words("the cat sit on mat now"));
  CHECK(c.substitutions + c.deletions + c.insertions == 3);
  const auto d = edit_counts(words("a b c d"), words("a c d e"));
  CHECK(d.substitutions == 0);
  CHECK(d.deletions == 1);
  CHECK(d.insertions == 1);
  const auto e = edit_counts(words("a b c"), words("a x c"));
  CHECK(e.substitutions == 1);
  CHECK(e.deletions + e.insertions == 0);
  CHECK_THROWS_AS(wer({}, words("a")), ContractError);
  // Relabelling tokens consistently leaves the rate unchanged.
  CHECK(wer(words("x y z x"), words("x z z")) == wer(words("p q r p"), words("p r r")));
}

TEST_CASE("config round trip, digest and validation") {
  PipelineConfig cfg;
  cfg.seed = 42;
  cfg.input.registration = {"a.wav", "b.wav"};
  cfg.mix.ambient_dbfs = -60.0;
  cfg.modulation.options.scheme = txchain::Scheme::DSB;
  cfg.recovery.reference = recover::ReferenceMode::Raw;
  cfg.synth.crossfade_ms = 20.0 / 3.0;
  const auto back = PipelineConfig::parse(cfg.dump(2));
  CHECK(back.dump() == cfg.dump());
  CHECK(back.digest() == cfg.digest());
  CHECK(back.synth.crossfade_ms == cfg.synth.crossfade_ms);
  CHECK(back.mix.ambient_dbfs.value() == -60.0);
  CHECK(PipelineConfig{}.digest() == PipelineConfig{}.digest());
  CHECK(cfg.digest() != PipelineConfig{}.digest());
  CHECK(cfg.synth_config().seed == 42);

  CHECK_THROWS_AS(PipelineConfig::parse("{\"sead\": 3}"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::parse("{\"synth\": {\"crossfade\": 3}}"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::parse("{\"seed\": \"x\"}"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::parse("not json"), ConfigError);
  PipelineConfig bad;
  bad.modulation.options.carrier_hz = 95000;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("stage ranges") {
  const auto r = pipeline::StageRange::parse("mix..recover");
  CHECK(r.first == pipeline::Stage::Mix);
  CHECK(r.last == pipeline::Stage::Recover);
  CHECK(pipeline::StageRange::parse("synth").first == pipeline::Stage::Synth);
  CHECK(pipeline::StageRange::parse("").last == pipeline::Stage::Report);
  CHECK_THROWS_AS(pipeline::StageRange::parse("recover..mix"), ConfigError);
  CHECK_THROWS_AS(pipeline::StageRange::parse("mixx"), ConfigError);
}

TEST_CASE("asr clients") {
  asr::AsrConfig none;
  try {
    asr::make_client(none);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("asr") != std::string::npos);
  }

  asr::CannedAsrClient canned("a x c");
  CHECK(wer(words("a b c"), canned.transcribe(short_audio())) == doctest::Approx(1.0 / 3));

  SUBCASE("http json and plain bodies") {
    Server s([](const httplib::Request& req, httplib::Response& res) {
      if (req.get_header_value("Content-Type") != "audio/wav" || req.body.substr(0, 4) != "RIFF") {
        res.status = 400;
        return;
      }
      res.set_content(R"({"transcript": "hello there world"})", "application/json");
    });
    auto client = asr::make_client(http_config(s.url()));
    CHECK(client->transcribe(short_audio()) == words("hello there world"));
  }
  SUBCASE("non-2xx is a service error with an excerpt") {
    Server s([](const httplib::Request&, httplib::Response& res) {
      res.status = 503;
      res.set_content("model overloaded, retry later", "text/plain");
    });
    try {
      asr::HttpAsrClient(http_config(s.url())).transcribe(short_audio());
      FAIL("expected ServiceError");
    } catch (const ServiceError& e) {
      CHECK(e.status() == 503);
      CHECK(std::string(e.what()).find("model overloaded") != std::string::npos);
    }
  }
  SUBCASE("deadline") {
    Server s([](const httplib::Request&, httplib::Response& res) {
      std::this_thread::sleep_for(std::chrono::milliseconds(1500));
      res.set_content("late", "text/plain");
    });
    const auto t0 = std::chrono::steady_clock::now();
    CHECK_THROWS_AS(asr::HttpAsrClient(http_config(s.url(), 0.3)).transcribe(short_audio()), TransportError);
    CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::milliseconds(1400));
  }
  SUBCASE("unreachable endpoint") {
    CHECK_THROWS_AS(asr::HttpAsrClient(http_config("http://127.0.0.1:1/asr", 1.0)).transcribe(short_audio()),
                    TransportError);
  }
  SUBCASE("bad endpoint") { CHECK_THROWS_AS(asr::make_client(http_config("ftp://x")), ConfigError); }
  SUBCASE("command client") {
    asr::AsrConfig c;
    c.kind = "command";
    c.command = "echo the quick fox; test -f";
    CHECK(asr::make_client(c)->transcribe(short_audio()) == words("the quick fox"));
    c.command = "false";
    CHECK_THROWS_AS(asr::make_client(c)->transcribe(short_audio()), ServiceError);
  }
}

TEST_CASE("pipeline determinism, dependencies and sweep") {
  oracle::TempDir dir("pipeline");
  auto cfg = fixture_config(dir / "corpus");

  const auto a = pipeline::run_pipeline(cfg, dir / "run_a");
  const auto b = pipeline::run_pipeline(cfg, dir / "run_b");
  CHECK(a.executed.size() == 8);
  CHECK_FALSE(a.report_digest.empty());
  CHECK(a.report_digest == b.report_digest);
  CHECK(pipeline::read_report_digest(dir / "run_a") == a.report_digest);
  CHECK_FALSE(fs::exists(dir / "run_a" / ".lock"));

  std::ifstream manifest(dir / "run_a" / "artifacts.json");
  const auto j = nlohmann::json::parse(manifest);
  for (auto s : pipeline::kStages)
    for (const auto& name : pipeline::stage_outputs(s)) {
      INFO(name);
      REQUIRE(j.contains(name));
      CHECK(j[name]["config_digest"] == cfg.digest());
    }

  std::ifstream report(dir / "run_a" / "report.json");
  const auto r = nlohmann::json::parse(report);
  CHECK(r["seed"] == 1234);
  CHECK(r["config_digest"] == cfg.digest());
  CHECK(r["aligned"] == true);
  CHECK(r["si_snr_after"].get<double>() > r["si_snr_before"].get<double>() + 5.0);

  // Resuming mid-pipeline reuses earlier artifacts.
  const auto resumed = pipeline::run_pipeline(cfg, dir / "run_a", pipeline::StageRange::parse("mix..report"));
  CHECK(resumed.report_digest == a.report_digest);

  fs::remove(dir / "run_b" / "noise_log.csv");
  try {
    pipeline::run_pipeline(cfg, dir / "run_b", pipeline::StageRange::parse("mix..recover"));
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "recover");
    CHECK(std::string(e.what()).find("noise_log.csv") != std::string::npos);
    CHECK(std::string(e.what()).find("synth") != std::string::npos);
  }
  CHECK(fs::exists(dir / "run_b" / "recording.wav"));

  const auto rows = pipeline::run_sweep(cfg, dir / "run_a");
  REQUIRE(rows.size() == 7);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].snr_db == cfg.mix.sweep_snr_db[i]);
    CHECK(rows[i].aligned);
    if (i > 0) CHECK(rows[i].si_snr_before > rows[i - 1].si_snr_before);
    if (rows[i].snr_db <= 0) CHECK(rows[i].si_snr_after > rows[i].si_snr_before);
  }
  std::ifstream sweep(dir / "run_a" / "sweep.csv");
  std::string line;
  int count = 0;
  while (std::getline(sweep, line)) ++count;
  CHECK(count == 8);

  // Changing the seed changes the noise and therefore the report.
  cfg.seed = 99;
  CHECK(pipeline::run_pipeline(cfg, dir / "run_c").report_digest != a.report_digest);
}

TEST_CASE("lock file excludes concurrent runs") {
  oracle::TempDir dir("lock");
  pipeline::RunLock held(dir.path());
  CHECK_THROWS_AS(pipeline::RunLock(dir.path()), StageError);
}

TEST_CASE("stage failures name the stage") {
  oracle::TempDir dir("fail");
  PipelineConfig cfg;
  cfg.input.manifest = (dir / "missing.csv").string();
  try {
    pipeline::run_pipeline(cfg, dir / "out", pipeline::StageRange::parse("ingest"));
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "ingest");
  }
}

TEST_CASE("command line exit codes") {
  oracle::TempDir dir("exit");
  std::ofstream(dir / "bad.json") << "{\"nonsense\": 1}";
  std::ofstream(dir / "empty.json") << "{}";
  std::ofstream(dir / "ref.txt") << "a b c";
  std::ofstream(dir / "hyp.txt") << "a x c";
  const auto out = (dir / "out").string();
  CHECK(run_cli("wer " + (dir / "ref.txt").string() + " " + (dir / "hyp.txt").string()) == 0);
  CHECK(run_cli("run -c " + (dir / "bad.json").string() + " -o " + out) == 2);
  CHECK(run_cli("recover -c " + (dir / "empty.json").string() + " -o " + out) == 3);
  CHECK(run_cli("init-config") == 0);
}
