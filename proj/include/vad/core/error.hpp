#pragma once

#include <stdexcept>
#include <string>

namespace vad {

// Base of every error the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
};

class ShapeError : public Error {
 public:
  ShapeError(const std::string& where, const std::string& expected, const std::string& got)
      : Error(where + ": shape mismatch, expected " + expected + ", got " + got),
        expected_(expected), got_(got) {}
  const std::string& expected() const noexcept { return expected_; }
  const std::string& got() const noexcept { return got_; }

 private:
  std::string expected_;
  std::string got_;
};

// A remote model or detector could not be reached or answered with garbage at the
// transport level.
class TransportError : public Error {
 public:
  explicit TransportError(const std::string& what) : Error("transport error: " + what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error("parse error: " + what) {}
};

class DegenerateBoxError : public Error {
 public:
  explicit DegenerateBoxError(const std::string& what) : Error("degenerate-box: " + what) {}
};

class ResumeMismatchError : public Error {
 public:
  explicit ResumeMismatchError(const std::string& what) : Error("resume mismatch: " + what) {}
};

class ArtifactError : public Error {
 public:
  explicit ArtifactError(const std::string& what) : Error("artifact error: " + what) {}
};

}  // namespace vad
