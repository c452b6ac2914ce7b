#pragma once

#include <memory>
#include <string>
#include <vector>

#include "phonemask/audio.hpp"

namespace phonemask::asr {

class AsrClient {
 public:
  virtual ~AsrClient() = default;
  // Hypothesis tokens. Failures raise TransportError or ServiceError; an
  // empty result always means the service heard nothing.
  virtual std::vector<std::string> transcribe(const Waveform& audio) = 0;
};

inline constexpr const char* kTokenEnv = "PHONEMASK_ASR_TOKEN";

struct AsrConfig {
  std::string kind = "none";  // none | http | command
  std::string endpoint;       // http://host:port/path
  std::string command;        // run as `command <wav path>`, transcript on stdout
  double timeout_s = 30.0;
  std::string token_env = kTokenEnv;
};

// POSTs the audio as audio/wav. The response body is either JSON with a
// "transcript" string or plain text. A bearer token is read from the
// environment variable named by token_env, when set.
class HttpAsrClient : public AsrClient {
 public:
  explicit HttpAsrClient(AsrConfig cfg);
  std::vector<std::string> transcribe(const Waveform& audio) override;

 private:
  AsrConfig cfg_;
  std::string host_;
  int port_ = 80;
  std::string path_;
};

class CommandAsrClient : public AsrClient {
 public:
  explicit CommandAsrClient(AsrConfig cfg);
  std::vector<std::string> transcribe(const Waveform& audio) override;

 private:
  AsrConfig cfg_;
};

// Returns a fixed transcript; for tests and dry runs.
class CannedAsrClient : public AsrClient {
 public:
  explicit CannedAsrClient(std::string transcript) : transcript_(std::move(transcript)) {}
  std::vector<std::string> transcribe(const Waveform& audio) override;

 private:
  std::string transcript_;
};

// Throws ConfigError explaining how to configure a client when kind is none.
std::unique_ptr<AsrClient> make_client(const AsrConfig& cfg);

}  // namespace phonemask::asr
