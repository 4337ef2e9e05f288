#pragma once

#include <stdexcept>
#include <string>

namespace portsim {

/// Misuse of an API contract: conflicting buffer access, double restore,
/// wrong assembly state, mismatched layouts.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// The simulated machine cannot satisfy the request (e.g. device access on a
/// rank without devices).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Collectively detected malformed input (communication graph, matrix
/// pattern, grid shape).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every live rank is blocked on a receive that no rank will ever send.
class DeadlockError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Krylov breakdown, indefinite operator, divergence, or a failed stub
/// comparison.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, int iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

/// Two implementations of the same callback disagree.
class ComparisonError : public SolverError {
 public:
  ComparisonError(const std::string& what, double norm) : SolverError(what, -1), norm_(norm) {}
  double norm() const { return norm_; }

 private:
  double norm_;
};

}  // namespace portsim
