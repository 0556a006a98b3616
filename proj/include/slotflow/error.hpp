#pragma once

#include <stdexcept>
#include <string>

namespace slotflow {

enum class ErrorKind {
  Argument,
  Config,
  Capacity,
  Load,
  Divergence,
  Stage,
};

const char* to_string(ErrorKind kind);

/// Base error carrying a machine-readable kind. The CLI maps kinds onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Load failure tied to a named item (object id, tensor name).
class LoadError : public Error {
 public:
  LoadError(std::string subject, const std::string& message)
      : Error(ErrorKind::Load, subject + ": " + message), subject_(std::move(subject)) {}

  const std::string& subject() const noexcept { return subject_; }

 private:
  std::string subject_;
};

inline Error argument_error(const std::string& m) { return Error(ErrorKind::Argument, m); }
inline Error config_error(const std::string& m) { return Error(ErrorKind::Config, m); }

}  // namespace slotflow
