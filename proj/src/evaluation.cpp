#include "gns/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gns/errors.hpp"
#include "gns/parallel.hpp"

namespace gns::evaluation {

namespace {

bool all_finite(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * 0.0;
  return s == 0.0;
}

TrajectoryResult compare(const datagen::Trajectory& truth, const Rollout& r, int id, bool keep) {
  TrajectoryResult out;
  out.id = id;
  const int C = truth.channels;
  if (r.diverged_at) {
    out.diverged = true;
    out.diverged_at = *r.diverged_at;
    if (keep) out.predicted = r.fields;
    return out;
  }
  const std::size_t snap = truth.snapshot_size();
  out.err_sq.assign(C, 0.0);
  out.truth_sq.assign(C, 0.0);
  out.per_step.assign(static_cast<std::size_t>(truth.nt) * C, std::numeric_limits<double>::quiet_NaN());
  for (int t = 0; t < truth.nt; ++t) {
    std::vector<double> e(C, 0.0), n(C, 0.0);
    for (std::size_t i = 0; i < snap; ++i) {
      const double a = r.fields[t * snap + i], b = truth.fields[t * snap + i];
      e[i % C] += (a - b) * (a - b);
      n[i % C] += b * b;
    }
    for (int c = 0; c < C; ++c) {
      out.err_sq[c] += e[c];
      out.truth_sq[c] += n[c];
      if (n[c] > 0.0) out.per_step[t * C + c] = std::sqrt(e[c] / n[c]);
    }
  }
  out.overall.resize(C);
  for (int c = 0; c < C; ++c) {
    if (!(out.truth_sq[c] > 0.0)) throw InputError("relative L2 undefined: trajectory " + std::to_string(id) + " has a zero channel");
    out.overall[c] = std::sqrt(out.err_sq[c] / out.truth_sq[c]);
  }
  if (keep) out.predicted = r.fields;
  return out;
}

}  // namespace

Derivative gns_derivative(const model::Simulator& sim) {
  return [&sim](std::span<const double> u, std::span<double> dudt) {
    const auto d = sim.derivative(u);
    std::copy(d.begin(), d.end(), dudt.begin());
  };
}

Rollout rollout(std::span<const double> u0, const Derivative& f, double dt, int n_steps) {
  if (n_steps < 0) throw ConfigError("rollout: negative step count");
  const std::size_t n = u0.size();
  Rollout r;
  r.fields.reserve(n * (n_steps + 1));
  r.fields.assign(u0.begin(), u0.end());
  std::vector<double> u(u0.begin(), u0.end()), du(n);
  for (int s = 1; s <= n_steps; ++s) {
    try {
      f(u, du);
    } catch (const NumericalError&) {
      r.diverged_at = s;
      return r;
    }
    for (std::size_t i = 0; i < n; ++i) u[i] += dt * du[i];
    if (!all_finite(u)) {
      r.diverged_at = s;
      return r;
    }
    r.fields.insert(r.fields.end(), u.begin(), u.end());
    r.steps_done = s;
  }
  return r;
}

std::vector<double> relative_l2(std::span<const double> pred, std::span<const double> truth, int channels) {
  if (channels < 1 || pred.size() != truth.size() || truth.size() % channels != 0) {
    throw DimensionError("relative L2: prediction and truth sizes differ");
  }
  std::vector<double> e(channels, 0.0), n(channels, 0.0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    e[i % channels] += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    n[i % channels] += truth[i] * truth[i];
  }
  std::vector<double> out(channels);
  for (int c = 0; c < channels; ++c) {
    if (!(n[c] > 0.0)) throw InputError("relative L2 undefined: truth has zero norm in channel " + std::to_string(c));
    out[c] = std::sqrt(e[c] / n[c]);
  }
  return out;
}

Report evaluate_suite(const datagen::Dataset& ds, std::span<const int> ids, const Derivative& f,
                      const SuiteOptions& opts) {
  if (ids.empty()) throw ConfigError("evaluate: no trajectories selected");
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= ds.size()) {
      throw IndexError("evaluate: trajectory id " + std::to_string(id) + " not in dataset of " + std::to_string(ds.size()));
    }
  }
  std::vector<int> sorted(ids.begin(), ids.end());
  std::sort(sorted.begin(), sorted.end());

  Report rep;
  rep.channels = ds.channels;
  rep.nt = ds.nt;
  rep.dt = ds.dt_coarse;
  rep.trajectories.resize(sorted.size());
  std::vector<std::exception_ptr> errors(sorted.size());
  parallel_for(sorted.size(), resolve_threads(opts.threads), [&](std::size_t k) {
    try {
      const auto& tr = ds.trajectories[sorted[k]];
      const auto r = rollout(tr.snapshot(0), f, ds.dt_coarse, tr.nt - 1);
      rep.trajectories[k] = compare(tr, r, sorted[k], opts.keep_predictions);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  });
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  const int C = ds.channels;
  rep.mean_overall.assign(C, 0.0);
  rep.stacked_overall.assign(C, 0.0);
  rep.mean_curve.assign(static_cast<std::size_t>(ds.nt) * C, 0.0);
  std::vector<double> err(C, 0.0), norm(C, 0.0);
  std::vector<int> curve_count(rep.mean_curve.size(), 0);
  int ok = 0;
  for (const auto& t : rep.trajectories) {
    if (t.diverged) {
      ++rep.n_diverged;
      continue;
    }
    ++ok;
    for (int c = 0; c < C; ++c) {
      rep.mean_overall[c] += t.overall[c];
      err[c] += t.err_sq[c];
      norm[c] += t.truth_sq[c];
    }
    for (std::size_t i = 0; i < t.per_step.size(); ++i) {
      if (std::isnan(t.per_step[i])) continue;
      rep.mean_curve[i] += t.per_step[i];
      ++curve_count[i];
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int c = 0; c < C; ++c) {
    rep.mean_overall[c] = ok > 0 ? rep.mean_overall[c] / ok : nan;
    rep.stacked_overall[c] = ok > 0 ? std::sqrt(err[c] / norm[c]) : nan;
  }
  for (std::size_t i = 0; i < rep.mean_curve.size(); ++i) {
    rep.mean_curve[i] = curve_count[i] > 0 ? rep.mean_curve[i] / curve_count[i] : nan;
  }
  return rep;
}

}  // namespace gns::evaluation
