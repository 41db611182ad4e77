#pragma once

#include <stdexcept>
#include <string>

namespace dhd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed argument: non-finite values, length mismatches, empty inputs.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A vector whose norm is too small for a cosine to be meaningful.
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

/// A hyper-parameter or configuration field outside its valid range.
class InvalidConfig : public Error {
 public:
  using Error::Error;
};

/// Tensor or code shapes that disagree with what the caller expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// File with an unknown magic tag or unsupported format version.
class VersionMismatch : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dhd
