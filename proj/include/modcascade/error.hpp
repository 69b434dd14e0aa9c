#pragma once

#include <stdexcept>
#include <string>

namespace modcascade {

enum class ErrorKind {
  Parse,
  Validation,
  UnknownLabel,
  Domain,
  Detector,
  Protocol,
  Io,
};

/// Base of every exception thrown by the library. The kind selects the CLI
/// exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ParseError : Error {
  explicit ParseError(const std::string& what) : Error(ErrorKind::Parse, what) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

struct UnknownLabelError : Error {
  explicit UnknownLabelError(const std::string& label)
      : Error(ErrorKind::UnknownLabel, "unknown label: " + label) {}
};

/// Precondition violations on numeric arguments (ranges, empty inputs, zero denominators).
struct DomainError : Error {
  explicit DomainError(const std::string& what) : Error(ErrorKind::Domain, what) {}
};

struct DetectorError : Error {
  explicit DetectorError(const std::string& what) : Error(ErrorKind::Detector, what) {}
};

struct ProtocolError : Error {
  explicit ProtocolError(const std::string& what) : Error(ErrorKind::Protocol, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

/// 0 success, 2 config/validation, 3 detector/protocol, 4 I/O.
inline int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Detector:
    case ErrorKind::Protocol:
      return 3;
    case ErrorKind::Io:
      return 4;
    default:
      return 2;
  }
}

}  // namespace modcascade
