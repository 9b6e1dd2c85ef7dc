#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dtpbc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// The normal matrix (g*)^T g* of the equilibrium input map is singular.
class RankDeficient : public Error {
 public:
  using Error::Error;
};

class NotAssignable : public Error {
 public:
  NotAssignable(double residual, double threshold);
  double residual() const noexcept { return residual_; }
  double threshold() const noexcept { return threshold_; }

 private:
  double residual_;
  double threshold_;
};

class SingularStepMatrix : public Error {
 public:
  explicit SingularStepMatrix(double rcond);
  double rcond() const noexcept { return rcond_; }

 private:
  double rcond_;
};

class SingularJacobian : public Error {
 public:
  explicit SingularJacobian(double rcond);
  double rcond() const noexcept { return rcond_; }

 private:
  double rcond_;
};

class NoConvergence : public Error {
 public:
  NoConvergence(int iterations, double residual);
  int iterations() const noexcept { return iterations_; }
  double residual() const noexcept { return residual_; }

 private:
  int iterations_;
  double residual_;
};

/// A check was asked to verify a trajectory produced by an incompatible stepper.
class WrongMode : public Error {
 public:
  using Error::Error;
};

/// A stepper failure inside a scenario run, tagged with where it happened.
class SolverFailure : public Error {
 public:
  SolverFailure(std::size_t step, double wall_seconds, const std::string& what);
  std::size_t step() const noexcept { return step_; }
  double wall_seconds() const noexcept { return wall_seconds_; }

 private:
  std::size_t step_;
  double wall_seconds_;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message);
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace dtpbc
