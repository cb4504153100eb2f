#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace das2 {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an input does not have the size an operation expects.
class DimensionError : public Error {
 public:
  DimensionError(const std::string& what, std::size_t expected, std::size_t actual)
      : Error(what + ": expected " + std::to_string(expected) + ", got " + std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}

  std::size_t expected() const { return expected_; }
  std::size_t actual() const { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

/// Raised when rejection sampling cannot collect enough accepted points.
class StarvationError : public Error {
 public:
  StarvationError(const std::string& what, double acceptance_rate)
      : Error(what + " (acceptance rate " + std::to_string(acceptance_rate) + ")"),
        acceptance_rate_(acceptance_rate) {}

  double acceptance_rate() const { return acceptance_rate_; }

 private:
  double acceptance_rate_;
};

}  // namespace das2
