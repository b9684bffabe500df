#pragma once

#include <stdexcept>
#include <string>

namespace patchslam {

// Root of every error thrown by the library. Callers that only care about
// "the numerical pipeline failed" can catch this; the CLI maps subclasses to
// exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonPositiveDepth : public Error {
 public:
  using Error::Error;
};

class InconsistentFrameId : public Error {
 public:
  using Error::Error;
};

class IndexOutOfRange : public Error {
 public:
  using Error::Error;
};

class NoCounterpartPatch : public Error {
 public:
  using Error::Error;
};

class SingularSystem : public Error {
 public:
  using Error::Error;
};

class InsufficientParallax : public Error {
 public:
  using Error::Error;
};

class DegenerateConfiguration : public Error {
 public:
  using Error::Error;
};

class NoConsensus : public Error {
 public:
  using Error::Error;
};

class NoAssociations : public Error {
 public:
  using Error::Error;
};

class InfeasibleVisibility : public Error {
 public:
  using Error::Error;
};

// Malformed input file. Carries the 1-based line number of the offending
// record (0 when the problem is not tied to a line, e.g. a missing file).
class ParseError : public Error {
 public:
  ParseError(const std::string& source, int line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what),
        line_(line) {}

  int line() const { return line_; }

 private:
  int line_;
};

// Invalid run configuration (unknown key, out-of-range value, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace patchslam
