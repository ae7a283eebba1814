#pragma once

#include <stdexcept>
#include <string>

namespace traceseq {

// Error taxonomy shared by every module. Each maps to a distinct failure
// class so callers (the CLI in particular) can turn them into exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Raised by a stage when an artifact from an earlier stage is absent.
class MissingPrerequisite : public Error {
 public:
  MissingPrerequisite(std::string stage, const std::string& detail)
      : Error("missing prerequisite stage '" + stage + "': " + detail), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace traceseq
