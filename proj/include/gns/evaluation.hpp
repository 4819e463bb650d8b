#pragma once

// Explicit-Euler rollouts and relative L2 error metrics.

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "gns/datagen.hpp"
#include "gns/model.hpp"

namespace gns::evaluation {

/// du/dt for one state in the interleaved node-major layout.
using Derivative = std::function<void(std::span<const double> u, std::span<double> dudt)>;

Derivative gns_derivative(const model::Simulator& sim);

struct Rollout {
  std::vector<double> fields;  // [steps_done + 1][n][C], starts with u0
  int steps_done = 0;
  std::optional<int> diverged_at;  // step whose result was non-finite
};

/// u^{t+1} = u^t + dt f(u^t) for n_steps. Stops at the first non-finite state
/// (or a NumericalError from f), keeping everything computed before it.
Rollout rollout(std::span<const double> u0, const Derivative& f, double dt, int n_steps);

/// ||pred - truth|| / ||truth|| per channel over all entries.
/// Throws InputError on size mismatch or a zero truth norm.
std::vector<double> relative_l2(std::span<const double> pred, std::span<const double> truth, int channels);

struct TrajectoryResult {
  int id = 0;
  bool diverged = false;
  int diverged_at = -1;
  std::vector<double> overall;  // per channel, whole space-time block
  /// [nt][C] spatial errors; NaN where the truth norm is zero.
  std::vector<double> per_step;
  std::vector<double> err_sq, truth_sq;  // per channel, for stacked aggregation
  std::vector<double> predicted;  // filled when requested
};

struct Report {
  int channels = 0;
  int nt = 0;
  double dt = 0.0;
  std::vector<TrajectoryResult> trajectories;  // in id order
  int n_diverged = 0;
  std::vector<double> mean_overall;     // per channel, mean of per-trajectory ratios
  std::vector<double> stacked_overall;  // per channel, ratio of norms over all trajectories
  std::vector<double> mean_curve;       // [nt][C], mean over finite entries
};

struct SuiteOptions {
  int threads = 1;
  bool keep_predictions = false;
};

/// Rolls out every id from its initial snapshot with dt = ds.dt_coarse and
/// compares against the stored trajectory. Diverged rollouts are counted and
/// left out of the means.
Report evaluate_suite(const datagen::Dataset& ds, std::span<const int> ids, const Derivative& f,
                      const SuiteOptions& opts = {});

}  // namespace gns::evaluation
