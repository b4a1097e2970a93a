#pragma once

#include <stdexcept>
#include <string>

namespace rgbmark {

/// Base of every error raised by the library. The CLI maps the subclasses
/// onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller passed a value that violates an operation's precondition.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Configuration, checkpoint or corpus is unusable for the requested run.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace rgbmark
