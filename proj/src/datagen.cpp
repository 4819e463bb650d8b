#include "gns/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <exception>
#include <memory>
#include <numbers>

#include "gns/errors.hpp"
#include "gns/parallel.hpp"
#include "spectral.hpp"

namespace gns::datagen {

using spectral::cplx;
using spectral::Lattice;
using spectral::RealFft2d;

namespace {

constexpr double kRk4StabilityRadius = 2.8;
constexpr cplx kI{0.0, 1.0};

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

void check_blowup(std::span<const double> v, double threshold, double t, std::string_view what) {
  for (double x : v) {
    if (!std::isfinite(x) || std::abs(x) > threshold) {
      throw InstabilityError(std::string(what) + ": solution blew up", t);
    }
  }
}

int substeps_for(double dt_coarse, double spectral_radius, const SolverOptions& opts) {
  if (spectral_radius <= 0.0) return opts.substep_multiplier;
  const double dt_stable = opts.cfl * kRk4StabilityRadius / spectral_radius;
  const int base = std::max(1, static_cast<int>(std::ceil(dt_coarse / dt_stable - 1e-12)));
  return base * opts.substep_multiplier;
}

/// Classic RK4 on a flat state vector.
template <class T>
class Rk4 {
 public:
  explicit Rk4(std::size_t n) : k1_(n), k2_(n), k3_(n), k4_(n), tmp_(n) {}

  template <class F>
  void step(std::vector<T>& y, double h, F&& f) {
    const std::size_t n = y.size();
    f(y, k1_);
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = y[i] + (0.5 * h) * k1_[i];
    f(tmp_, k2_);
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = y[i] + (0.5 * h) * k2_[i];
    f(tmp_, k3_);
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = y[i] + h * k3_[i];
    f(tmp_, k4_);
    for (std::size_t i = 0; i < n; ++i) y[i] += (h / 6.0) * (k1_[i] + 2.0 * k2_[i] + 2.0 * k3_[i] + k4_[i]);
  }

 private:
  std::vector<T> k1_, k2_, k3_, k4_, tmp_;
};

Trajectory make_trajectory(PdeCase pde, const GridSpec& grid, const SolverOptions& opts) {
  Trajectory tr;
  tr.pde = pde;
  tr.nt = opts.nt;
  tr.n_nodes = grid.nodes();
  tr.channels = channel_count(pde);
  tr.dt_coarse = opts.dt_coarse;
  tr.fields.assign(static_cast<std::size_t>(tr.nt) * tr.snapshot_size(), 0.0);
  return tr;
}

void store_channel(Trajectory& tr, int t, int c, std::span<const double> field) {
  auto snap = tr.snapshot(t);
  for (int i = 0; i < tr.n_nodes; ++i) snap[static_cast<std::size_t>(i) * tr.channels + c] = field[i];
}

void check_ic(std::span<const double> ic, const GridSpec& grid, std::string_view what) {
  if (static_cast<int>(ic.size()) != grid.nodes()) {
    throw DimensionError(std::string(what) + ": initial condition has " + std::to_string(ic.size()) +
                         " values for a " + std::to_string(grid.nx) + "x" + std::to_string(grid.ny) + " grid");
  }
  for (double v : ic) {
    if (!std::isfinite(v)) throw InputError(std::string(what) + ": non-finite initial condition");
  }
}

// ---- Burgers (scalar and coupled), pseudo-spectral ------------------------

/// u_t + u u_x + v u_y = ν∇²u (and the v equation); the scalar case uses v = u.
class BurgersSpectral {
 public:
  BurgersSpectral(const GridSpec& grid, double nu, bool coupled)
      : lat_(grid.nx, grid.ny), fft_(grid.nx, grid.ny), nu_(nu), coupled_(coupled),
        ns_(fft_.spectral_size()), np_(static_cast<std::size_t>(grid.nodes())),
        u_(np_), v_(np_), dx_(np_), dy_(np_), prod_(np_), tmp_(ns_) {
    kx_max_ = *std::max_element(lat_.kx.begin(), lat_.kx.end());
    ky_max_ = 0.0;
    for (double k : lat_.ky) ky_max_ = std::max(ky_max_, std::abs(k));
    k2_max_ = *std::max_element(lat_.k2.begin(), lat_.k2.end());
  }

  std::size_t spectral_size() const { return ns_; }
  std::size_t state_size() const { return coupled_ ? 2 * ns_ : ns_; }

  double spectral_radius(double umax, double vmax) const {
    return nu_ * k2_max_ + umax * kx_max_ + vmax * ky_max_;
  }

  /// Right-hand side for the spectral state (û or [û, v̂]).
  void rhs(const std::vector<cplx>& state, std::vector<cplx>& out) {
    if (!coupled_) {
      std::span<const cplx> uh(state.data(), ns_);
      fft_.inverse(uh, u_);
      for (int i = 0; i < lat_.ny; ++i) {
        for (int j = 0; j < lat_.nxh; ++j) {
          const auto k = lat_.index(i, j);
          tmp_[k] = kI * (lat_.kx[j] + lat_.ky[i]) * uh[k];
        }
      }
      fft_.inverse(tmp_, dx_);
      for (std::size_t p = 0; p < np_; ++p) prod_[p] = u_[p] * dx_[p];
      fft_.forward(prod_, tmp_);
      for (std::size_t k = 0; k < ns_; ++k) out[k] = -lat_.dealias[k] * tmp_[k] - nu_ * lat_.k2[k] * uh[k];
      return;
    }
    std::span<const cplx> uh(state.data(), ns_);
    std::span<const cplx> vh(state.data() + ns_, ns_);
    fft_.inverse(uh, u_);
    fft_.inverse(vh, v_);
    advect(uh, std::span<cplx>(out.data(), ns_));
    advect(vh, std::span<cplx>(out.data() + ns_, ns_));
  }

  void to_physical(const std::vector<cplx>& state, int component, std::vector<double>& out) {
    fft_.inverse(std::span<const cplx>(state.data() + component * ns_, ns_), out);
  }
  void to_spectral(std::span<const double> field, std::span<cplx> out) { fft_.forward(field, out); }

 private:
  // out = -dealias·FFT(u ∂x w + v ∂y w) - ν k² ŵ, using u_, v_ already in physical space.
  void advect(std::span<const cplx> wh, std::span<cplx> out) {
    for (int i = 0; i < lat_.ny; ++i) {
      for (int j = 0; j < lat_.nxh; ++j) tmp_[lat_.index(i, j)] = kI * lat_.kx[j] * wh[lat_.index(i, j)];
    }
    fft_.inverse(tmp_, dx_);
    for (int i = 0; i < lat_.ny; ++i) {
      for (int j = 0; j < lat_.nxh; ++j) tmp_[lat_.index(i, j)] = kI * lat_.ky[i] * wh[lat_.index(i, j)];
    }
    fft_.inverse(tmp_, dy_);
    for (std::size_t p = 0; p < np_; ++p) prod_[p] = u_[p] * dx_[p] + v_[p] * dy_[p];
    fft_.forward(prod_, tmp_);
    for (std::size_t k = 0; k < ns_; ++k) out[k] = -lat_.dealias[k] * tmp_[k] - nu_ * lat_.k2[k] * wh[k];
  }

  Lattice lat_;
  RealFft2d fft_;
  double nu_;
  bool coupled_;
  std::size_t ns_, np_;
  std::vector<double> u_, v_, dx_, dy_, prod_;
  std::vector<cplx> tmp_;
  double kx_max_, ky_max_, k2_max_;
};

Trajectory run_burgers(std::span<const double> ic_u, std::span<const double> ic_v, const GridSpec& grid,
                       double nu, bool coupled, const SolverOptions& opts) {
  grid.validate();
  if (!(nu > 0.0)) throw ConfigError("burgers: viscosity must be positive");
  const char* what = coupled ? "burgers_coupled" : "burgers_scalar";
  check_ic(ic_u, grid, what);
  if (coupled) check_ic(ic_v, grid, what);

  const PdeCase pde = coupled ? PdeCase::burgers_coupled : PdeCase::burgers_scalar;
  Trajectory tr = make_trajectory(pde, grid, opts);
  BurgersSpectral solver(grid, nu, coupled);
  const std::size_t ns = solver.spectral_size();
  std::vector<cplx> state(solver.state_size());
  solver.to_spectral(ic_u, std::span<cplx>(state.data(), ns));
  if (coupled) solver.to_spectral(ic_v, std::span<cplx>(state.data() + ns, ns));

  store_channel(tr, 0, 0, ic_u);
  if (coupled) store_channel(tr, 0, 1, ic_v);
  std::vector<double> u(ic_u.begin(), ic_u.end());
  std::vector<double> v = coupled ? std::vector<double>(ic_v.begin(), ic_v.end()) : u;

  Rk4<cplx> rk(state.size());
  auto f = [&](const std::vector<cplx>& y, std::vector<cplx>& dy) { solver.rhs(y, dy); };
  for (int step = 1; step < opts.nt; ++step) {
    const double umax = max_abs(u), vmax = coupled ? max_abs(v) : umax;
    const int nsub = substeps_for(opts.dt_coarse, solver.spectral_radius(umax, vmax), opts);
    const double h = opts.dt_coarse / nsub;
    for (int s = 0; s < nsub; ++s) rk.step(state, h, f);
    const double t = step * opts.dt_coarse;
    solver.to_physical(state, 0, u);
    check_blowup(u, opts.blowup_threshold, t, what);
    store_channel(tr, step, 0, u);
    if (coupled) {
      solver.to_physical(state, 1, v);
      check_blowup(v, opts.blowup_threshold, t, what);
      store_channel(tr, step, 1, v);
    }
  }
  return tr;
}

// ---- Allen–Cahn, ETDRK4 ----------------------------------------------------

/// Cox–Matthews ETDRK4 coefficients for the diagonal operator L = -ε²k²,
/// with φ-functions averaged over a 32-point unit contour around each hL.
struct EtdCoefficients {
  std::vector<double> e, e2, q, f1, f2, f3;

  EtdCoefficients(const Lattice& lat, double epsilon, double h) {
    constexpr int kContour = 32;
    const std::size_t n = lat.k2.size();
    e.resize(n); e2.resize(n); q.resize(n); f1.resize(n); f2.resize(n); f3.resize(n);
    std::array<cplx, kContour> roots;
    for (int j = 0; j < kContour; ++j) roots[j] = std::exp(kI * std::numbers::pi * ((j + 0.5) / kContour));
    for (std::size_t k = 0; k < n; ++k) {
      const double lh = -epsilon * epsilon * lat.k2[k] * h;
      e[k] = std::exp(lh);
      e2[k] = std::exp(0.5 * lh);
      cplx sq{}, s1{}, s2{}, s3{};
      for (const cplx& r : roots) {
        const cplx z = lh + r;
        const cplx ez = std::exp(z), z3 = z * z * z;
        sq += (std::exp(0.5 * z) - 1.0) / z;
        s1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
        s2 += (2.0 + z + ez * (-2.0 + z)) / z3;
        s3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
      }
      q[k] = h * (sq.real() / kContour);
      f1[k] = h * (s1.real() / kContour);
      f2[k] = h * (s2.real() / kContour);
      f3[k] = h * (s3.real() / kContour);
    }
  }
};

class AllenCahnSpectral {
 public:
  AllenCahnSpectral(const GridSpec& grid, double epsilon, bool reaction)
      : lat_(grid.nx, grid.ny), fft_(grid.nx, grid.ny), epsilon_(epsilon), reaction_(reaction),
        u_(static_cast<std::size_t>(grid.nodes())) {}

  const Lattice& lattice() const { return lat_; }
  RealFft2d& fft() { return fft_; }

  /// N̂(v) = FFT(u - u³).
  void nonlinear(std::span<const cplx> vh, std::span<cplx> out) {
    if (!reaction_) {
      std::fill(out.begin(), out.end(), cplx{});
      return;
    }
    fft_.inverse(vh, u_);
    for (double& x : u_) x = x - x * x * x;
    fft_.forward(u_, out);
  }

  double epsilon() const { return epsilon_; }

 private:
  Lattice lat_;
  RealFft2d fft_;
  double epsilon_;
  bool reaction_;
  std::vector<double> u_;
};

// ---- shallow water, central finite differences -----------------------------

class ShallowWaterFd {
 public:
  ShallowWaterFd(const GridSpec& grid, double gravity, double nu)
      : nx_(grid.nx), ny_(grid.ny), n_(static_cast<std::size_t>(grid.nodes())), g_(gravity), nu_(nu),
        inv2dx_(0.5 * grid.nx), inv2dy_(0.5 * grid.ny), invdx2_(double(grid.nx) * grid.nx),
        invdy2_(double(grid.ny) * grid.ny), u_(n_), v_(n_), fx_(n_), fy_(n_) {}

  std::size_t n() const { return n_; }

  /// State layout: [h | hu | hv], each n values.
  void rhs(const std::vector<double>& s, std::vector<double>& out) {
    const double* h = s.data();
    const double* hu = s.data() + n_;
    const double* hv = s.data() + 2 * n_;
    for (std::size_t p = 0; p < n_; ++p) {
      u_[p] = hu[p] / h[p];
      v_[p] = hv[p] / h[p];
    }
    // mass
    for (std::size_t p = 0; p < n_; ++p) {
      fx_[p] = hu[p];
      fy_[p] = hv[p];
    }
    divergence(out.data());
    // x-momentum
    for (std::size_t p = 0; p < n_; ++p) {
      fx_[p] = hu[p] * u_[p] + 0.5 * g_ * h[p] * h[p];
      fy_[p] = hu[p] * v_[p];
    }
    divergence(out.data() + n_);
    add_viscous(u_, out.data() + n_);
    // y-momentum
    for (std::size_t p = 0; p < n_; ++p) {
      fx_[p] = hv[p] * u_[p];
      fy_[p] = hv[p] * v_[p] + 0.5 * g_ * h[p] * h[p];
    }
    divergence(out.data() + 2 * n_);
    add_viscous(v_, out.data() + 2 * n_);
  }

  double spectral_radius(const std::vector<double>& s) const {
    double ax = 0.0, ay = 0.0, hmin = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < n_; ++p) {
      const double h = s[p];
      const double c = std::sqrt(g_ * std::max(h, 0.0));
      ax = std::max(ax, std::abs(s[n_ + p] / h) + c);
      ay = std::max(ay, std::abs(s[2 * n_ + p] / h) + c);
      hmin = std::min(hmin, h);
    }
    const double diffusion = nu_ / std::max(hmin, 1e-12) * 4.0 * (invdx2_ + invdy2_);
    return ax * 2.0 * inv2dx_ + ay * 2.0 * inv2dy_ + diffusion;
  }

 private:
  std::size_t at(int ix, int iy) const {
    ix = (ix + nx_) % nx_;
    iy = (iy + ny_) % ny_;
    return static_cast<std::size_t>(iy) * nx_ + ix;
  }

  // out = -(Dx fx + Dy fy)
  void divergence(double* out) const {
    for (int iy = 0; iy < ny_; ++iy) {
      for (int ix = 0; ix < nx_; ++ix) {
        const double ddx = (fx_[at(ix + 1, iy)] - fx_[at(ix - 1, iy)]) * inv2dx_;
        const double ddy = (fy_[at(ix, iy + 1)] - fy_[at(ix, iy - 1)]) * inv2dy_;
        out[at(ix, iy)] = -(ddx + ddy);
      }
    }
  }

  void add_viscous(const std::vector<double>& w, double* out) const {
    for (int iy = 0; iy < ny_; ++iy) {
      for (int ix = 0; ix < nx_; ++ix) {
        const double c = w[at(ix, iy)];
        const double lap = (w[at(ix + 1, iy)] - 2.0 * c + w[at(ix - 1, iy)]) * invdx2_ +
                           (w[at(ix, iy + 1)] - 2.0 * c + w[at(ix, iy - 1)]) * invdy2_;
        out[at(ix, iy)] += nu_ * lap;
      }
    }
  }

  int nx_, ny_;
  std::size_t n_;
  double g_, nu_, inv2dx_, inv2dy_, invdx2_, invdy2_;
  mutable std::vector<double> u_, v_, fx_, fy_;
};

void check_positive(std::span<const double> h, double t) {
  for (double x : h) {
    if (!(x > 0.0)) throw PositivityError("swe: water height is not positive", t);
  }
}

double spectral_density(const GrfSpec& s, double k2) {
  const double l2 = s.length_scale * s.length_scale;
  if (s.kernel == KernelKind::squared_exponential) return std::exp(-0.5 * l2 * k2);
  // Matérn in two dimensions: (2ν/l² + |k|²)^-(ν + 1), up to a constant.
  return std::pow(2.0 * s.matern_nu / l2 + k2, -(s.matern_nu + 1.0));
}

}  // namespace

// ---- public API ------------------------------------------------------------

void GridSpec::validate() const {
  if (nx < 8 || ny < 8 || nx % 2 != 0 || ny % 2 != 0) {
    throw ConfigError("grid " + std::to_string(nx) + "x" + std::to_string(ny) +
                      " invalid: spectral grids need even sizes >= 8");
  }
}

void GrfSpec::validate() const {
  if (!(length_scale > 0.0)) throw ConfigError("grf: length scale must be positive");
  if (!normalize_to && !(sigma > 0.0)) throw ConfigError("grf: sigma must be positive");
  if (normalize_to && !(normalize_to->second > normalize_to->first)) {
    throw ConfigError("grf: normalization range must be increasing");
  }
  if (kernel == KernelKind::matern && !(matern_nu > 0.0)) throw ConfigError("grf: Matern smoothness must be positive");
}

std::vector<double> sample_grf(const GridSpec& grid, const GrfSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  return sample_grf(grid, spec, rng);
}

std::vector<double> sample_grf(const GridSpec& grid, const GrfSpec& spec, std::mt19937_64& rng) {
  grid.validate();
  spec.validate();
  const int nx = grid.nx, ny = grid.ny;
  const std::size_t n = static_cast<std::size_t>(grid.nodes());
  const double two_pi = 2.0 * std::numbers::pi;

  std::vector<double> density(n);
  double total = 0.0;
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      const double kx = two_pi * spectral::signed_mode(ix, nx);
      const double ky = two_pi * spectral::signed_mode(iy, ny);
      const double s = spectral_density(spec, kx * kx + ky * ky);
      density[static_cast<std::size_t>(iy) * nx + ix] = s;
      total += s;
    }
  }
  // Re Σ a_k ξ_k e^{ikx} with E|ξ|² = 1 has variance ½ Σ a_k².
  const double target_var = spec.normalize_to ? 1.0 : spec.sigma * spec.sigma;
  const double scale = 2.0 * target_var / total;

  std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
  std::vector<cplx> coeffs(n), field(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double re = normal(rng);
    const double im = normal(rng);
    coeffs[k] = std::sqrt(density[k] * scale) * cplx(re, im);
  }
  spectral::complex_inverse_2d(nx, ny, coeffs, field);

  std::vector<double> out(n);
  for (std::size_t p = 0; p < n; ++p) out[p] = field[p].real();
  if (spec.normalize_to) {
    const auto [lo, hi] = *spec.normalize_to;
    const auto [mn, mx] = std::minmax_element(out.begin(), out.end());
    const double fmin = *mn, span = *mx - *mn;
    for (double& x : out) x = span > 0.0 ? lo + (x - fmin) / span * (hi - lo) : 0.5 * (lo + hi);
  }
  return out;
}

std::string_view case_name(PdeCase pde) {
  switch (pde) {
    case PdeCase::burgers_scalar: return "burgers_scalar";
    case PdeCase::burgers_coupled: return "burgers_coupled";
    case PdeCase::allen_cahn: return "allen_cahn";
    case PdeCase::swe: return "swe";
  }
  return "unknown";
}

PdeCase parse_case(std::string_view name) {
  for (PdeCase c : {PdeCase::burgers_scalar, PdeCase::burgers_coupled, PdeCase::allen_cahn, PdeCase::swe}) {
    if (case_name(c) == name) return c;
  }
  throw ConfigError("unknown case '" + std::string(name) +
                    "' (expected burgers_scalar, burgers_coupled, allen_cahn or swe)");
}

int channel_count(PdeCase pde) {
  switch (pde) {
    case PdeCase::burgers_scalar:
    case PdeCase::allen_cahn: return 1;
    case PdeCase::burgers_coupled: return 2;
    case PdeCase::swe: return 3;
  }
  return 0;
}

void Dataset::validate() const {
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& tr = trajectories[i];
    if (tr.pde != pde || tr.nt != nt || tr.channels != channels || tr.n_nodes != grid.nodes() ||
        tr.fields.size() != static_cast<std::size_t>(nt) * tr.snapshot_size()) {
      throw InputError("dataset: trajectory " + std::to_string(i) + " does not match the dataset layout");
    }
  }
}

Trajectory solve_burgers_scalar(std::span<const double> ic, const GridSpec& grid, double nu,
                                const SolverOptions& opts) {
  return run_burgers(ic, {}, grid, nu, false, opts);
}

Trajectory solve_burgers_coupled(std::span<const double> ic_u, std::span<const double> ic_v,
                                 const GridSpec& grid, double mu, const SolverOptions& opts) {
  return run_burgers(ic_u, ic_v, grid, mu, true, opts);
}

Trajectory solve_allen_cahn(std::span<const double> ic, const GridSpec& grid, double epsilon,
                            const SolverOptions& opts) {
  grid.validate();
  check_ic(ic, grid, "allen_cahn");
  if (!(epsilon > 0.0)) throw ConfigError("allen_cahn: epsilon must be positive");
  if (opts.ac_refinement < 1) throw ConfigError("allen_cahn: refinement must be >= 1");

  Trajectory tr = make_trajectory(PdeCase::allen_cahn, grid, opts);
  AllenCahnSpectral solver(grid, epsilon, opts.ac_reaction);
  const int nsub = opts.ac_refinement * opts.substep_multiplier;
  const double h = opts.dt_coarse / nsub;
  const EtdCoefficients c(solver.lattice(), epsilon, h);
  const std::size_t ns = solver.fft().spectral_size();

  std::vector<cplx> v(ns), nv(ns), a(ns), na(ns), b(ns), nb(ns), cc(ns), nc(ns);
  solver.fft().forward(ic, v);
  store_channel(tr, 0, 0, ic);
  std::vector<double> u(ic.size());
  for (int step = 1; step < opts.nt; ++step) {
    for (int s = 0; s < nsub; ++s) {
      solver.nonlinear(v, nv);
      for (std::size_t k = 0; k < ns; ++k) a[k] = c.e2[k] * v[k] + c.q[k] * nv[k];
      solver.nonlinear(a, na);
      for (std::size_t k = 0; k < ns; ++k) b[k] = c.e2[k] * v[k] + c.q[k] * na[k];
      solver.nonlinear(b, nb);
      for (std::size_t k = 0; k < ns; ++k) cc[k] = c.e2[k] * a[k] + c.q[k] * (2.0 * nb[k] - nv[k]);
      solver.nonlinear(cc, nc);
      for (std::size_t k = 0; k < ns; ++k) {
        v[k] = c.e[k] * v[k] + nv[k] * c.f1[k] + 2.0 * (na[k] + nb[k]) * c.f2[k] + nc[k] * c.f3[k];
      }
    }
    solver.fft().inverse(v, u);
    check_blowup(u, opts.blowup_threshold, step * opts.dt_coarse, "allen_cahn");
    store_channel(tr, step, 0, u);
  }
  return tr;
}

Trajectory solve_swe(std::span<const double> ic_eta, const GridSpec& grid, double gravity, double nu,
                     const SolverOptions& opts) {
  grid.validate();
  check_ic(ic_eta, grid, "swe");
  if (!(gravity > 0.0) || nu < 0.0) throw ConfigError("swe: need g > 0 and nu >= 0");
  check_positive(ic_eta, 0.0);

  Trajectory tr = make_trajectory(PdeCase::swe, grid, opts);
  ShallowWaterFd solver(grid, gravity, nu);
  const std::size_t n = solver.n();
  std::vector<double> state(3 * n, 0.0);
  std::copy(ic_eta.begin(), ic_eta.end(), state.begin());

  std::vector<double> u(n), v(n);
  auto store = [&](int step) {
    for (std::size_t p = 0; p < n; ++p) {
      u[p] = state[n + p] / state[p];
      v[p] = state[2 * n + p] / state[p];
    }
    store_channel(tr, step, 0, u);
    store_channel(tr, step, 1, v);
    store_channel(tr, step, 2, std::span<const double>(state.data(), n));
  };
  store(0);

  Rk4<double> rk(state.size());
  auto f = [&](const std::vector<double>& y, std::vector<double>& dy) { solver.rhs(y, dy); };
  for (int step = 1; step < opts.nt; ++step) {
    const int nsub = substeps_for(opts.dt_coarse, solver.spectral_radius(state), opts);
    const double h = opts.dt_coarse / nsub;
    for (int s = 0; s < nsub; ++s) {
      rk.step(state, h, f);
      const double t = (step - 1) * opts.dt_coarse + (s + 1) * h;
      check_positive(std::span<const double>(state.data(), n), t);
      check_blowup(state, opts.blowup_threshold, t, "swe");
    }
    store(step);
  }
  return tr;
}

RhsFn make_rhs(PdeCase pde, const GridSpec& grid, const PdeParams& params) {
  grid.validate();
  const std::size_t n = static_cast<std::size_t>(grid.nodes());
  switch (pde) {
    case PdeCase::burgers_scalar:
    case PdeCase::burgers_coupled: {
      const bool coupled = pde == PdeCase::burgers_coupled;
      auto solver = std::make_shared<BurgersSpectral>(grid, params.viscosity, coupled);
      return [solver, n, coupled](std::span<const double> s, std::span<double> out) {
        const int C = coupled ? 2 : 1;
        const std::size_t ns = solver->spectral_size();
        std::vector<cplx> state(solver->state_size()), d(solver->state_size());
        std::vector<double> field(n);
        for (int c = 0; c < C; ++c) {
          for (std::size_t p = 0; p < n; ++p) field[p] = s[p * C + c];
          solver->to_spectral(field, std::span<cplx>(state.data() + c * ns, ns));
        }
        solver->rhs(state, d);
        for (int c = 0; c < C; ++c) {
          solver->to_physical(d, c, field);
          for (std::size_t p = 0; p < n; ++p) out[p * C + c] = field[p];
        }
      };
    }
    case PdeCase::allen_cahn: {
      auto solver = std::make_shared<AllenCahnSpectral>(grid, params.epsilon, true);
      return [solver, n](std::span<const double> s, std::span<double> out) {
        auto& fft = solver->fft();
        const auto& lat = solver->lattice();
        std::vector<cplx> spec(fft.spectral_size());
        fft.forward(s, spec);
        const double e2 = solver->epsilon() * solver->epsilon();
        for (std::size_t k = 0; k < spec.size(); ++k) spec[k] *= -e2 * lat.k2[k];
        fft.inverse(spec, out);
        for (std::size_t p = 0; p < n; ++p) out[p] += s[p] - s[p] * s[p] * s[p];
      };
    }
    case PdeCase::swe: {
      auto solver = std::make_shared<ShallowWaterFd>(grid, params.gravity, params.viscosity);
      return [solver, n](std::span<const double> s, std::span<double> out) {
        std::vector<double> state(3 * n), d(3 * n);
        for (std::size_t p = 0; p < n; ++p) {
          const double h = s[p * 3 + 2];
          state[p] = h;
          state[n + p] = h * s[p * 3 + 0];
          state[2 * n + p] = h * s[p * 3 + 1];
        }
        solver->rhs(state, d);
        for (std::size_t p = 0; p < n; ++p) {
          const double h = state[p];
          out[p * 3 + 0] = (d[n + p] - s[p * 3 + 0] * d[p]) / h;
          out[p * 3 + 1] = (d[2 * n + p] - s[p * 3 + 1] * d[p]) / h;
          out[p * 3 + 2] = d[p];
        }
      };
    }
  }
  throw ConfigError("make_rhs: unknown case");
}

CaseSpec default_case(PdeCase pde) {
  CaseSpec spec;
  spec.pde = pde;
  switch (pde) {
    case PdeCase::burgers_scalar:
      spec.grid = {32, 32};
      spec.grf = {KernelKind::matern, 0.125, 0.15, std::nullopt, 2.5, 0};
      spec.params.viscosity = 0.01;
      break;
    case PdeCase::burgers_coupled:
      spec.grid = {64, 64};
      spec.grf = {KernelKind::matern, 0.1, 0.2, std::nullopt, 2.5, 0};
      spec.params.viscosity = 0.01;
      break;
    case PdeCase::allen_cahn:
      spec.grid = {32, 32};
      spec.grf = {KernelKind::squared_exponential, 0.05, 1.0, std::make_pair(-1.0, 1.0), 2.5, 0};
      spec.params.epsilon = 0.05;
      break;
    case PdeCase::swe:
      spec.grid = {64, 64};
      spec.grf = {KernelKind::matern, 0.1, 0.2, std::nullopt, 2.5, 0};
      spec.params.gravity = 1.0;
      spec.params.viscosity = 0.002;
      break;
  }
  return spec;
}

std::vector<double> sample_initial_condition(const CaseSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t n = static_cast<std::size_t>(spec.grid.nodes());
  switch (spec.pde) {
    case PdeCase::burgers_scalar:
    case PdeCase::allen_cahn:
      return sample_grf(spec.grid, spec.grf, rng);
    case PdeCase::burgers_coupled: {
      const auto u = sample_grf(spec.grid, spec.grf, rng);
      const auto v = sample_grf(spec.grid, spec.grf, rng);
      std::vector<double> out(2 * n);
      for (std::size_t p = 0; p < n; ++p) {
        out[2 * p] = u[p];
        out[2 * p + 1] = v[p];
      }
      return out;
    }
    case PdeCase::swe: {
      const auto pert = sample_grf(spec.grid, spec.grf, rng);
      std::vector<double> out(3 * n, 0.0);
      for (std::size_t p = 0; p < n; ++p) out[3 * p + 2] = std::max(1.0 + pert[p], spec.swe_min_eta);
      return out;
    }
  }
  return {};
}

namespace {

Trajectory solve_case(const CaseSpec& spec, std::span<const double> ic) {
  const std::size_t n = static_cast<std::size_t>(spec.grid.nodes());
  auto channel = [&](int c, int C) {
    std::vector<double> f(n);
    for (std::size_t p = 0; p < n; ++p) f[p] = ic[p * C + c];
    return f;
  };
  switch (spec.pde) {
    case PdeCase::burgers_scalar:
      return solve_burgers_scalar(ic, spec.grid, spec.params.viscosity, spec.solver);
    case PdeCase::burgers_coupled:
      return solve_burgers_coupled(channel(0, 2), channel(1, 2), spec.grid, spec.params.viscosity, spec.solver);
    case PdeCase::allen_cahn:
      return solve_allen_cahn(ic, spec.grid, spec.params.epsilon, spec.solver);
    case PdeCase::swe:
      return solve_swe(channel(2, 3), spec.grid, spec.params.gravity, spec.params.viscosity, spec.solver);
  }
  throw ConfigError("solve: unknown case");
}

[[noreturn]] void rethrow_with_index(std::exception_ptr ep, int index) {
  const std::string prefix = "sample " + std::to_string(index) + ": ";
  try {
    std::rethrow_exception(ep);
  } catch (const PositivityError& e) {
    throw PositivityError(prefix + e.what(), e.time());
  } catch (const InstabilityError& e) {
    throw InstabilityError(prefix + e.what(), e.time());
  } catch (const NumericalError& e) {
    throw NumericalError(prefix + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const InputError& e) {
    throw InputError(prefix + e.what());
  }
}

}  // namespace

Dataset generate_dataset(const CaseSpec& spec, int n_samples, std::uint64_t base_seed, int threads) {
  spec.grid.validate();
  spec.grf.validate();
  if (n_samples < 1) throw ConfigError("generate_dataset: need at least one sample");

  Dataset ds;
  ds.pde = spec.pde;
  ds.grid = spec.grid;
  ds.params = spec.params;
  ds.nt = spec.solver.nt;
  ds.channels = channel_count(spec.pde);
  ds.dt_coarse = spec.solver.dt_coarse;
  ds.trajectories.resize(n_samples);

  std::vector<std::exception_ptr> errors(n_samples);
  parallel_for(static_cast<std::size_t>(n_samples), threads, [&](std::size_t i) {
    try {
      const std::uint64_t seed = base_seed + i;
      const auto ic = sample_initial_condition(spec, seed);
      ds.trajectories[i] = solve_case(spec, ic);
      ds.trajectories[i].ic_seed = seed;
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (int i = 0; i < n_samples; ++i) {
    if (errors[i]) rethrow_with_index(errors[i], i);
  }
  return ds;
}

}  // namespace gns::datagen
