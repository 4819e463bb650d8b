#pragma once

// Ground-truth trajectories: periodic Gaussian-random-field initial conditions
// and solvers for scalar/coupled Burgers, Allen–Cahn and shallow water.
//
// Fields are stored node-major with channels interleaved: value (node, c) of a
// snapshot lives at [node * C + c], and node = iy * nx + ix with x fastest.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gns::datagen {

struct GridSpec {
  int nx = 32;
  int ny = 32;

  int nodes() const { return nx * ny; }
  double dx() const { return 1.0 / nx; }
  double dy() const { return 1.0 / ny; }
  /// Spectral solvers need nx, ny >= 8 and even. Throws ConfigError.
  void validate() const;
  bool operator==(const GridSpec&) const = default;
};

enum class KernelKind { matern, squared_exponential };

struct GrfSpec {
  KernelKind kernel = KernelKind::matern;
  double length_scale = 0.125;
  /// Target pointwise standard deviation (ignored when normalize_to is set).
  double sigma = 0.15;
  std::optional<std::pair<double, double>> normalize_to;
  double matern_nu = 2.5;
  std::uint64_t seed = 0;

  void validate() const;
};

std::vector<double> sample_grf(const GridSpec& grid, const GrfSpec& spec);
/// Draws from an existing generator; used when one seed feeds several fields.
std::vector<double> sample_grf(const GridSpec& grid, const GrfSpec& spec, std::mt19937_64& rng);

enum class PdeCase { burgers_scalar, burgers_coupled, allen_cahn, swe };

std::string_view case_name(PdeCase pde);
PdeCase parse_case(std::string_view name);
int channel_count(PdeCase pde);

struct PdeParams {
  /// ν for scalar Burgers and SWE, μ for coupled Burgers.
  double viscosity = 0.01;
  /// Interface width ε (Allen–Cahn).
  double epsilon = 0.05;
  /// Gravitational acceleration g (SWE).
  double gravity = 1.0;
};

struct SolverOptions {
  int nt = 101;
  double dt_coarse = 0.01;
  /// Safety factor on the RK4 stability bound when choosing substeps.
  double cfl = 0.5;
  /// Extra refinement applied to the stability-limited substep count.
  int substep_multiplier = 1;
  /// Allen–Cahn: fine ETDRK4 steps per coarse interval.
  int ac_refinement = 200;
  /// Allen–Cahn: switch off the cubic reaction term (pure heat equation).
  bool ac_reaction = true;
  double blowup_threshold = 1e3;
};

struct Trajectory {
  PdeCase pde = PdeCase::burgers_scalar;
  int nt = 0;
  int n_nodes = 0;
  int channels = 0;
  double dt_coarse = 0.01;
  std::uint64_t ic_seed = 0;
  std::vector<double> fields;  // [nt][n_nodes][channels]

  std::size_t snapshot_size() const { return static_cast<std::size_t>(n_nodes) * channels; }
  std::span<const double> snapshot(int t) const {
    return std::span<const double>(fields).subspan(t * snapshot_size(), snapshot_size());
  }
  std::span<double> snapshot(int t) {
    return std::span<double>(fields).subspan(t * snapshot_size(), snapshot_size());
  }
  double at(int t, int node, int c) const { return fields[(t * snapshot_size()) + node * channels + c]; }
};

struct Dataset {
  PdeCase pde = PdeCase::burgers_scalar;
  GridSpec grid;
  PdeParams params;
  int nt = 101;
  int channels = 1;
  double dt_coarse = 0.01;
  std::vector<Trajectory> trajectories;

  std::size_t size() const { return trajectories.size(); }
  /// Checks that every trajectory matches the shared grid/pde/nt/C. Throws InputError.
  void validate() const;
};

Trajectory solve_burgers_scalar(std::span<const double> ic, const GridSpec& grid, double nu,
                                const SolverOptions& opts = {});
Trajectory solve_burgers_coupled(std::span<const double> ic_u, std::span<const double> ic_v,
                                 const GridSpec& grid, double mu, const SolverOptions& opts = {});
Trajectory solve_allen_cahn(std::span<const double> ic, const GridSpec& grid, double epsilon,
                            const SolverOptions& opts = {});
/// Initial velocities are zero; stored channels are (u, v, η).
Trajectory solve_swe(std::span<const double> ic_eta, const GridSpec& grid, double gravity, double nu,
                     const SolverOptions& opts = {});

/// Instantaneous time derivative of a state in the stored (interleaved) layout.
using RhsFn = std::function<void(std::span<const double> state, std::span<double> dstate_dt)>;
/// The semi-discrete right-hand side used by the corresponding solver.
RhsFn make_rhs(PdeCase pde, const GridSpec& grid, const PdeParams& params);

/// Everything needed to generate one dataset.
struct CaseSpec {
  PdeCase pde = PdeCase::burgers_scalar;
  GridSpec grid;
  GrfSpec grf;
  PdeParams params;
  SolverOptions solver;
  /// SWE: lower clip for the initial height.
  double swe_min_eta = 0.2;
};

/// Dataset-generation settings for each case (grids, kernels, l, σ, parameters).
CaseSpec default_case(PdeCase pde);

/// Initial-condition channels for sample `seed` (interleaved like a snapshot).
std::vector<double> sample_initial_condition(const CaseSpec& spec, std::uint64_t seed);

/// Samples ICs at seeds base_seed + i and solves them; ordering follows i.
Dataset generate_dataset(const CaseSpec& spec, int n_samples, std::uint64_t base_seed, int threads = 1);

}  // namespace gns::datagen
