#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace prefgne {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver gave up; carries the last residuals.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, double primal_residual, double dual_residual)
      : Error(what), primal_residual_(primal_residual), dual_residual_(dual_residual) {}

  double primal_residual() const { return primal_residual_; }
  double dual_residual() const { return dual_residual_; }

 private:
  double primal_residual_;
  double dual_residual_;
};

class RiccatiDivergence : public Error {
 public:
  using Error::Error;
};

class NashConvergenceError : public Error {
 public:
  NashConvergenceError(const std::string& what, std::vector<double> trace)
      : Error(what), trace_(std::move(trace)) {}

  /// max_i deviation after each sweep.
  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace prefgne

namespace prefgne {

/// Failure inside an active-learning iteration, tagged with the iteration index.
class IterationError : public Error {
 public:
  IterationError(int iteration, const std::string& what)
      : Error("iteration " + std::to_string(iteration) + ": " + what), iteration_(iteration) {}

  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

}  // namespace prefgne
