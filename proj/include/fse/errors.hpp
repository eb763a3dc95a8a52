#pragma once

#include <stdexcept>
#include <string>

namespace fse {

// Error taxonomy used across the library. The CLI maps ConfigError and
// friends to exit code 2 and NumericError to exit code 3.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error("i/o error: " + msg) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error("format error: " + msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

struct PairingError : Error {
  explicit PairingError(const std::string& msg) : Error("pairing error: " + msg) {}
};

struct StateError : Error {
  explicit StateError(const std::string& msg) : Error("state error: " + msg) {}
};

#define FSE_CHECK(cond, exc, msg)      \
  do {                                 \
    if (!(cond)) throw exc(msg);       \
  } while (0)

}  // namespace fse
