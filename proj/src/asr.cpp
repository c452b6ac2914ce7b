#include "phonemask/asr.hpp"

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <regex>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>
#include <sys/wait.h>
#include <unistd.h>

#include "phonemask/errors.hpp"
#include "phonemask/wer.hpp"

namespace phonemask::asr {

namespace {

std::string excerpt(const std::string& body) {
  constexpr std::size_t kMax = 200;
  return body.size() <= kMax ? body : body.substr(0, kMax) + "...";
}

std::vector<std::string> parse_transcript(const std::string& body) {
  const auto json = nlohmann::json::parse(body, nullptr, false);
  if (json.is_object()) {
    if (!json.contains("transcript") || !json["transcript"].is_string())
      throw ServiceError(200, fmt::format("response has no \"transcript\" string: {}", excerpt(body)));
    return tokenize(json["transcript"].get<std::string>());
  }
  return tokenize(body);
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

}  // namespace

HttpAsrClient::HttpAsrClient(AsrConfig cfg) : cfg_(std::move(cfg)) {
  static const std::regex url(R"(^http://([^/:]+)(?::(\d+))?(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(cfg_.endpoint, m, url))
    throw ConfigError(fmt::format("ASR endpoint '{}' must look like http://host[:port]/path "
                                  "(https is not supported in this build)",
                                  cfg_.endpoint));
  host_ = m[1].str();
  port_ = m[2].matched ? std::stoi(m[2].str()) : 80;
  path_ = m[3].matched ? m[3].str() : "/";
  if (!(cfg_.timeout_s > 0.0)) throw ConfigError("ASR timeout must be positive");
}

std::vector<std::string> HttpAsrClient::transcribe(const Waveform& audio) {
  httplib::Client client(host_, port_);
  const auto secs = static_cast<time_t>(cfg_.timeout_s);
  const auto usecs = static_cast<time_t>((cfg_.timeout_s - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (const char* token = std::getenv(cfg_.token_env.c_str()); token && *token)
    headers.emplace("Authorization", fmt::format("Bearer {}", token));
  const auto res = client.Post(path_, headers, encode_wav(audio, SampleFormat::Pcm16), "audio/wav");
  if (!res)
    throw TransportError(fmt::format("ASR request to {} failed: {}", cfg_.endpoint,
                                     httplib::to_string(res.error())));
  if (res->status < 200 || res->status >= 300)
    throw ServiceError(res->status, fmt::format("ASR service returned HTTP {}: {}", res->status,
                                                excerpt(res->body)));
  return parse_transcript(res->body);
}

CommandAsrClient::CommandAsrClient(AsrConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.command.empty()) throw ConfigError("ASR command is empty");
}

std::vector<std::string> CommandAsrClient::transcribe(const Waveform& audio) {
  const auto tmp = std::filesystem::temp_directory_path() /
                   fmt::format("phonemask_asr_{}_{}.wav", static_cast<long>(::getpid()),
                               reinterpret_cast<std::uintptr_t>(&audio));
  write_wav(tmp, audio, SampleFormat::Pcm16);
  const std::string cmd = fmt::format("{} {}", cfg_.command, shell_quote(tmp.string()));
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) {
    std::filesystem::remove(tmp);
    throw TransportError(fmt::format("cannot run ASR command '{}'", cfg_.command));
  }
  std::string out;
  std::array<char, 4096> buf{};
  while (const std::size_t got = std::fread(buf.data(), 1, buf.size(), pipe)) out.append(buf.data(), got);
  const int status = ::pclose(pipe);
  std::filesystem::remove(tmp);
  if (status == -1) throw TransportError(fmt::format("ASR command '{}' could not be waited for", cfg_.command));
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  if (code != 0)
    throw ServiceError(code, fmt::format("ASR command '{}' exited with status {}: {}", cfg_.command,
                                         code, excerpt(out)));
  return parse_transcript(out);
}

std::vector<std::string> CannedAsrClient::transcribe(const Waveform&) { return tokenize(transcript_); }

std::unique_ptr<AsrClient> make_client(const AsrConfig& cfg) {
  if (cfg.kind == "http") return std::make_unique<HttpAsrClient>(cfg);
  if (cfg.kind == "command") return std::make_unique<CommandAsrClient>(cfg);
  if (cfg.kind == "none" || cfg.kind.empty())
    throw ConfigError(
        "no ASR client configured: set asr.kind to \"http\" with asr.endpoint (token in $" +
        cfg.token_env + ") or to \"command\" with asr.command");
  throw ConfigError(fmt::format("unknown ASR client kind '{}' (expected http or command)", cfg.kind));
}

}  // namespace phonemask::asr
