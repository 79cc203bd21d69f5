#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace avatar {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or vector dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value violates a documented invariant (non-orthonormal rotation, bad range, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration (unknown key, missing encoder branch, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent dataset on disk.
class DatasetError : public Error {
 public:
  DatasetError(const std::string& what, std::vector<int64_t> frame_ids = {})
      : Error(what), frame_ids_(std::move(frame_ids)) {}

  const std::vector<int64_t>& frame_ids() const noexcept { return frame_ids_; }

 private:
  std::vector<int64_t> frame_ids_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Least-squares projection onto a basis whose rows are (numerically) dependent.
class NumericalRankError : public Error {
 public:
  NumericalRankError(const std::string& what, long rank, double tolerance)
      : Error(what), rank_(rank), tolerance_(tolerance) {}

  long rank() const noexcept { return rank_; }
  double tolerance() const noexcept { return tolerance_; }

 private:
  long rank_;
  double tolerance_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, uint64_t iteration) : Error(what), iteration_(iteration) {}

  uint64_t iteration() const noexcept { return iteration_; }

 private:
  uint64_t iteration_;
};

}  // namespace avatar
