#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fff {

// Root of every error the library throws. Callers that only care about
// "something went wrong in fff" catch this; the subclasses carry the kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An index is outside the valid range.
class BoundsError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents (magic, flags, header fields).
class FormatError : public Error {
 public:
  using Error::Error;
};

// File length disagrees with its header.
class LengthError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Invalid combination of caller-supplied options.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Allocation failed at the requested problem size.
class ResourceError : public Error {
 public:
  using Error::Error;
};

inline std::string shape_string(std::size_t rows, std::size_t cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace fff
