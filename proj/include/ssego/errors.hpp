#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ssego {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition (shape mismatch, bad config value).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Input is geometrically or statistically degenerate (no valid pixels,
/// collinear correspondences, empty association).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

/// An iterative computation produced NaN/Inf or diverged.
class NumericalFailure : public Error {
 public:
  NumericalFailure(const std::string& what, std::size_t step)
      : Error(what + " (at step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// A trajectory requests accelerations the reference vehicle cannot produce.
class InfeasibleTrajectory : public Error {
 public:
  using Error::Error;
};

/// Configuration file / flag problems (unknown key, unparsable value).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// On-disk dataset problems. Subclasses distinguish the failure kind.
class DataError : public Error {
 public:
  using Error::Error;
};

class MissingFile : public DataError {
 public:
  explicit MissingFile(const std::string& path)
      : DataError("missing file: " + path), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class ChecksumMismatch : public DataError {
 public:
  explicit ChecksumMismatch(const std::string& path)
      : DataError("checksum mismatch: " + path), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class NonMonotoneTimestamps : public DataError {
 public:
  NonMonotoneTimestamps(const std::string& stream, std::size_t index)
      : DataError("non-monotone timestamps in " + stream + " at row " +
                  std::to_string(index)),
        index_(index) {}
  /// Zero-based index of the first sample whose time does not increase.
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Model/trajectory file written by an incompatible format version.
class VersionMismatch : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace ssego
