#pragma once

#include <stdexcept>
#include <string>

namespace tpi {

/// Caller passed a value outside an operation's contract (dimension
/// mismatch, non-unit start vector, malformed config, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A requested object would exceed a documented memory budget, or an
/// input/output resource could not be used.
class ResourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The contraction T(I,x,x) vanished, so the power update is undefined.
class DegenerateIterate : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tpi
