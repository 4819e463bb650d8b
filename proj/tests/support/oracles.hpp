#pragma once

// Test-only reference computations. Nothing here calls into the tape: the
// finite-difference oracle only evaluates forward passes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "gns/tensor.hpp"

namespace gns::testing {

/// Central differences of `loss` with respect to every entry of `t`.
inline std::vector<double> numeric_grad(ad::Tensor& t, const std::function<double()>& loss,
                                        double h = 1e-5) {
  auto v = t.mutable_values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double keep = v[i];
    v[i] = keep + h;
    const double up = loss();
    v[i] = keep - h;
    const double down = loss();
    v[i] = keep;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

/// Central difference for a single entry.
inline double numeric_grad_at(ad::Tensor& t, std::size_t i, const std::function<double()>& loss,
                              double h = 1e-5) {
  auto v = t.mutable_values();
  const double keep = v[i];
  v[i] = keep + h;
  const double up = loss();
  v[i] = keep - h;
  const double down = loss();
  v[i] = keep;
  return (up - down) / (2.0 * h);
}

inline double rel_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_error(std::span<const double> a, std::span<const double> b, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_error(a[i], b[i], floor));
  return worst;
}

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

inline ad::Tensor random_tensor(ad::Shape shape, std::uint64_t seed, bool requires_grad = true) {
  return ad::Tensor::from_values(shape, random_values(ad::shape_numel(shape), seed), requires_grad);
}

/// erf by its Maclaurin series in long double; fine for |x| <= 3.
inline long double series_erf(long double x) {
  long double term = x, total = x;
  for (int n = 1; n < 200; ++n) {
    term *= -x * x / n;
    total += term / (2 * n + 1);
  }
  return total * 2.0L / std::sqrt(3.14159265358979323846264338327950288L);
}

}  // namespace gns::testing
