#pragma once

#include <stdexcept>
#include <string>

namespace migratekit {

/// Base for every error raised by the library. The CLI maps the concrete
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A structured-text document did not match its schema. `path` names the
/// offending field, e.g. `steps[2].widget`.
class SchemaError : public Error {
 public:
  SchemaError(std::string path, const std::string& message);
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// A logic-step line matched neither step template.
class FormatError : public Error {
 public:
  explicit FormatError(std::string line);
  const std::string& line() const noexcept { return line_; }

 private:
  std::string line_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// LLM transport failed after the configured number of attempts.
class TransportError : public Error {
 public:
  using Error::Error;
};

class ScriptExhausted : public Error {
 public:
  using Error::Error;
};

class ReplayMismatch : public Error {
 public:
  using Error::Error;
};

/// Device backend transport failure. Semantic rejections are not errors.
class DriverError : public Error {
 public:
  using Error::Error;
};

class UnknownFunctionality : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

class EmptySuite : public Error {
 public:
  using Error::Error;
};

class EmptyGroundTruth : public Error {
 public:
  using Error::Error;
};

}  // namespace migratekit
