#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace impulse {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Syntax, unknown identifier or arity error in an expression; `offset` is a byte offset.
class ParseError : public Error {
 public:
  ParseError(std::size_t offset, const std::string& message)
      : Error("parse error at offset " + std::to_string(offset) + ": " + message),
        offset_(offset),
        detail_(message) {}

  std::size_t offset() const noexcept { return offset_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::size_t offset_;
  std::string detail_;
};

/// Evaluation left the domain of an expression (log of nonpositive, division by
/// zero, non-finite intermediate) or a flow left finite range.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// The u2-transport could not be formed because an intermediate flow failed.
class TransportUndefined : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Schema or invariant violation in user input. `path` is a JSON-pointer-like
/// location ("/g/0/1") or a field name.
class InputError : public Error {
 public:
  InputError(std::string path, const std::string& message)
      : Error(path.empty() ? message : path + ": " + message), path_(std::move(path)), detail_(message) {}

  const std::string& path() const noexcept { return path_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string path_;
  std::string detail_;
};

/// A variation map is not admissible for the candidate control.
class InadmissibleVariation : public Error {
 public:
  InadmissibleVariation(double time, const std::string& message)
      : Error(message), time_(time) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

/// Upstream failure inside the certification pipeline, tagged with the stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message)
      : Error(stage + ": " + message), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace impulse
