#pragma once

#include <stdexcept>
#include <string>

namespace whilter {

/// Invalid configuration or command-line input. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad or missing input data (audio, manifests, feature files). Exit code 1.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A NaN/Inf showed up where the numerics contract forbids it.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FormatErrc {
  io,
  bad_magic,
  unsupported_version,
  dtype_mismatch,
  truncated_payload,
  shape_mismatch,
};

inline const char* to_string(FormatErrc code) {
  switch (code) {
    case FormatErrc::io: return "io error";
    case FormatErrc::bad_magic: return "bad magic";
    case FormatErrc::unsupported_version: return "unsupported version";
    case FormatErrc::dtype_mismatch: return "dtype mismatch";
    case FormatErrc::truncated_payload: return "truncated payload";
    case FormatErrc::shape_mismatch: return "shape mismatch";
  }
  return "unknown";
}

/// Binary container errors; each corruption class has its own code.
class FormatError : public DataError {
 public:
  FormatError(FormatErrc code, const std::string& where)
      : DataError(std::string(to_string(code)) + ": " + where), code_(code) {}

  FormatErrc code() const noexcept { return code_; }

 private:
  FormatErrc code_;
};

}  // namespace whilter
