#pragma once

#include <stdexcept>
#include <string>

namespace exactloc {

enum class ErrorKind {
  dimension,
  numeric,
  singularity,
  geometry,
  input,
  configuration,
  io,
};

const char* to_string(ErrorKind kind) noexcept;

/// Exception type thrown by every library entry point.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::singularity: return "singularity";
    case ErrorKind::geometry: return "geometry";
    case ErrorKind::input: return "input";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

}  // namespace exactloc
