#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace linbayes {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
  using Error::Error;
};

class DimensionMismatch : public InvalidArgument {
public:
  DimensionMismatch(const std::string& what, Index expected, Index actual)
      : InvalidArgument(what + ": expected dimension " + std::to_string(expected) + ", got " +
                        std::to_string(actual)) {}
};

/// An iterative solve stopped at its iteration cap.
class SolverFailure : public Error {
public:
  SolverFailure(const std::string& what, double relative_residual, Index iterations)
      : Error(what + " (relative residual " + std::to_string(relative_residual) + " after " +
              std::to_string(iterations) + " iterations)"),
        relative_residual_(relative_residual), iterations_(iterations) {}

  double relative_residual() const noexcept { return relative_residual_; }
  Index iterations() const noexcept { return iterations_; }

private:
  double relative_residual_;
  Index iterations_;
};

/// The parameter lies outside the model's admissible set (e.g. nonpositive wavespeed).
class InvalidParameter : public Error {
public:
  using Error::Error;
};

/// Configuration is inconsistent, e.g. a time step violating the CFL bound.
class ConfigError : public Error {
public:
  ConfigError(const std::string& field_path, const std::string& message)
      : Error(field_path.empty() ? message : field_path + ": " + message), field_path_(field_path) {}

  const std::string& field_path() const noexcept { return field_path_; }

private:
  std::string field_path_;
};

class PreconditionViolation : public Error {
public:
  using Error::Error;
};

/// Time stepping blew up.
class StabilityFailure : public Error {
public:
  using Error::Error;
};

/// Reading or writing an artifact failed.
class IoError : public Error {
public:
  using Error::Error;
};

inline void require_dim(const char* what, Index expected, Index actual) {
  if (expected != actual)
    throw DimensionMismatch(what, expected, actual);
}

} // namespace linbayes
