#pragma once

#include <stdexcept>
#include <string>

namespace phonemask {

// Base for every error raised by the library. The CLI maps subclasses to
// process exit codes (see tools/phonemask.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller violated an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class IngestError : public Error {
 public:
  using Error::Error;
};

class ClassificationError : public Error {
 public:
  using Error::Error;
};

class ExtractionError : public Error {
 public:
  using Error::Error;
};

class RegistrationError : public Error {
 public:
  using Error::Error;
};

class SynthesisError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

class EstimationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : Error(stage + ": " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// External-service failures (ASR clients).
class ExternalError : public Error {
 public:
  using Error::Error;
};

class TransportError : public ExternalError {
 public:
  using ExternalError::ExternalError;
};

class ServiceError : public ExternalError {
 public:
  ServiceError(int status, const std::string& what)
      : ExternalError(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

}  // namespace phonemask
