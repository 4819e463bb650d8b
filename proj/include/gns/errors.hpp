#pragma once

#include <stdexcept>
#include <string>

namespace gns {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  ok = 0,
  usage = 2,
  validation = 3,
  divergence = 4,
};

class Error : public std::runtime_error {
 public:
  Error(const std::string& what, ExitCode code) : std::runtime_error(what), code_(code) {}
  ExitCode exit_code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Bad configuration values, unknown keys, empty selections.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, ExitCode::usage) {}
};

/// Input that fails validation: malformed files, bad shapes, out-of-range indices.
class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(what, ExitCode::validation) {}
};

class ChecksumError : public InputError {
 public:
  using InputError::InputError;
};

class DimensionError : public InputError {
 public:
  using InputError::InputError;
};

class IndexError : public InputError {
 public:
  using InputError::InputError;
};

/// Violated call contract (e.g. backward on a non-scalar).
class ContractError : public InputError {
 public:
  using InputError::InputError;
};

/// NaN/Inf produced or a solver / rollout / training run blew up.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(what, ExitCode::divergence) {}
};

/// Solver blow-up; carries the simulation time at which it was detected.
class InstabilityError : public NumericalError {
 public:
  InstabilityError(const std::string& what, double time)
      : NumericalError(what + " (t=" + std::to_string(time) + ")"), time_(time) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

class PositivityError : public InstabilityError {
 public:
  using InstabilityError::InstabilityError;
};

/// Training or rollout divergence; `where` is an epoch or step index.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, long where)
      : NumericalError(what + " (at " + std::to_string(where) + ")"), where_(where) {}
  long where() const noexcept { return where_; }

 private:
  long where_;
};

}  // namespace gns
