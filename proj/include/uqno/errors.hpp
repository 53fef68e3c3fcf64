#pragma once

#include <stdexcept>
#include <string>

namespace uqno {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A value violated an invariant that should have been guaranteed upstream.
class InvalidState : public Error {
 public:
  using Error::Error;
};

/// Malformed dataset, checkpoint, calibration or config document.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// The calibration set is too small for the requested (delta, t).
class InfeasibleCalibration : public Error {
 public:
  InfeasibleCalibration(const std::string& what, long required_n)
      : Error(what), required_n_(required_n) {}
  long required_n() const noexcept { return required_n_; }

 private:
  long required_n_;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

/// A file the current step depends on has not been produced yet.
class MissingArtifact : public Error {
 public:
  using Error::Error;
};

}  // namespace uqno
