#pragma once

#include <stdexcept>
#include <string>

namespace bitadapt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A tensor op received operands whose shapes do not conform.
class ShapeError : public Error {
 public:
  ShapeError(std::string op, const std::string& detail)
      : Error(op + ": " + detail), op_(std::move(op)) {}

  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

class IdxError : public Error {
 public:
  enum class Kind { io, bad_magic, truncated, count_mismatch, bad_dimensions };

  IdxError(Kind kind, const std::string& path, const std::string& detail)
      : Error(path + ": " + detail), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class CheckpointError : public Error {
 public:
  enum class Kind { io, bad_magic, unsupported_version, truncated, malformed };

  CheckpointError(Kind kind, const std::string& detail) : Error(detail), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// A configuration field failed to parse or validate.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error("config field '" + field + "': " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace bitadapt
