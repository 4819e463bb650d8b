#include "gns/selection.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "gns/errors.hpp"

namespace gns::selection {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

constexpr double kRankTolerance = 1e-12;

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

std::vector<int> counts_of(const std::vector<int>& labels, int k) {
  std::vector<int> n(k, 0);
  for (int l : labels) ++n[l];
  return n;
}

void update_centroids(const Matrix& points, const std::vector<int>& labels, Matrix& centroids) {
  const std::size_t k = centroids.rows, d = points.cols;
  const auto n = counts_of(labels, static_cast<int>(k));
  std::vector<double> acc(k * d, 0.0);
  for (std::size_t i = 0; i < points.rows; ++i) {
    for (std::size_t j = 0; j < d; ++j) acc[labels[i] * d + j] += points(i, j);
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (n[c] == 0) continue;
    for (std::size_t j = 0; j < d; ++j) centroids(c, j) = acc[c * d + j] / n[c];
  }
}

double inertia_of(const Matrix& points, const std::vector<int>& labels, const Matrix& centroids) {
  double s = 0.0;
  for (std::size_t i = 0; i < points.rows; ++i) s += sq_dist(points.row(i), centroids.row(labels[i]), points.cols);
  return s;
}

}  // namespace

std::string_view flatten_mode_name(FlattenMode m) {
  return m == FlattenMode::full_trajectory ? "full_trajectory" : "initial_condition";
}

FlattenMode parse_flatten_mode(std::string_view name) {
  if (name == "full_trajectory") return FlattenMode::full_trajectory;
  if (name == "initial_condition") return FlattenMode::initial_condition;
  throw ConfigError("unknown flatten mode '" + std::string(name) + "'");
}

void SelectionConfig::validate(int n_samples) const {
  if (n_components < 1) throw ConfigError("selection: n_components must be >= 1");
  if (n_select < 1 || n_select > n_samples) {
    throw ConfigError("selection: n_select must be in [1, " + std::to_string(n_samples) + "], got " +
                      std::to_string(n_select));
  }
  if (max_iters < 1) throw ConfigError("selection: max_iters must be >= 1");
}

int default_components(datagen::PdeCase pde) {
  switch (pde) {
    case datagen::PdeCase::burgers_coupled:
    case datagen::PdeCase::swe:
      return 50;
    default:
      return 20;
  }
}

Matrix flatten(const datagen::Dataset& ds, FlattenMode mode) {
  if (ds.size() == 0) throw ConfigError("selection: empty dataset");
  const auto& first = ds.trajectories.front();
  const std::size_t d = mode == FlattenMode::full_trajectory ? first.fields.size() : first.snapshot_size();
  Matrix out(ds.size(), d);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& tr = ds.trajectories[i];
    if (tr.fields.size() != first.fields.size()) throw DimensionError("selection: trajectories differ in size");
    std::copy_n(tr.fields.begin(), d, out.data.begin() + i * d);
  }
  return out;
}

Pca pca(const Matrix& samples, int m) {
  const std::size_t n = samples.rows, d = samples.cols;
  if (n < 2) throw ConfigError("pca: need at least two samples");
  if (m < 1) throw ConfigError("pca: need at least one component");
  const ConstMap raw(samples.data.data(), n, d);
  Pca out;
  const Eigen::RowVectorXd mean = raw.colwise().mean();
  out.mean.assign(mean.data(), mean.data() + d);
  const RowMat x = raw.rowwise() - mean;
  const Eigen::MatrixXd gram = x * x.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success) throw NumericalError("pca: eigen-decomposition failed");

  const Eigen::VectorXd lambda = eig.eigenvalues().reverse();
  const Eigen::MatrixXd u = eig.eigenvectors().rowwise().reverse();
  const double top = std::max(lambda(0), 0.0);
  int rank = 0;
  while (rank < static_cast<int>(n) && lambda(rank) > kRankTolerance * top && top > 0.0) ++rank;
  int used = m;
  if (m > rank) {
    used = std::max(rank, 1);
    out.warnings.push_back("pca: requested " + std::to_string(m) + " components but the data has rank " +
                           std::to_string(rank) + "; using " + std::to_string(used));
  }

  out.components = Matrix(used, d);
  out.scores = Matrix(n, used);
  out.singular_values.assign(used, 0.0);
  for (int c = 0; c < std::min(used, rank); ++c) {
    const double sigma = std::sqrt(lambda(c));
    Eigen::VectorXd v = x.transpose() * u.col(c) / sigma;
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    const Eigen::VectorXd s = x * v;
    std::copy_n(v.data(), d, out.components.data.begin() + c * d);
    for (std::size_t i = 0; i < n; ++i) out.scores(i, c) = s(i);
    out.singular_values[c] = sigma;
  }
  return out;
}

Pca pca_project(const datagen::Dataset& ds, const SelectionConfig& cfg) {
  return pca(flatten(ds, cfg.flatten), cfg.n_components);
}

KMeans kmeans(const Matrix& points, int k, std::uint64_t seed, int max_iters) {
  const std::size_t n = points.rows, d = points.cols;
  if (k < 1 || static_cast<std::size_t>(k) > n) {
    throw ConfigError("kmeans: k must be in [1, " + std::to_string(n) + "]");
  }
  if (max_iters < 1) throw ConfigError("kmeans: max_iters must be >= 1");
  std::mt19937_64 rng(seed);
  KMeans km;
  km.centroids = Matrix(k, d);

  // k-means++ seeding.
  std::vector<bool> chosen(n, false);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  auto take = [&](std::size_t idx, int c) {
    chosen[idx] = true;
    std::copy_n(points.row(idx), d, km.centroids.data.begin() + c * d);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], sq_dist(points.row(i), points.row(idx), d));
  };
  take(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng), 0);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (double w : nearest) total += w;
    std::size_t pick = n;
    if (total > 0.0) {
      const double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (nearest[i] <= 0.0) continue;
        acc += nearest[i];
        pick = i;
        if (acc > r) break;
      }
    }
    if (pick == n) pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), false) - chosen.begin());
    take(pick, c);
  }

  km.labels.assign(n, -1);
  for (int it = 0; it < max_iters; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = sq_dist(points.row(i), km.centroids.row(0), d);
      for (int c = 1; c < k; ++c) {
        const double dc = sq_dist(points.row(i), km.centroids.row(c), d);
        if (dc < best_d) best_d = dc, best = c;
      }
      if (km.labels[i] != best) changed = true;
      km.labels[i] = best;
    }
    auto count = counts_of(km.labels, k);
    for (int c = 0; c < k; ++c) {
      if (count[c] > 0) continue;
      const int largest = static_cast<int>(std::max_element(count.begin(), count.end()) - count.begin());
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (km.labels[i] != largest) continue;
        const double di = sq_dist(points.row(i), km.centroids.row(largest), d);
        if (di > far_d) far_d = di, far = i;
      }
      km.labels[far] = c;
      --count[largest];
      ++count[c];
      changed = true;
    }
    update_centroids(points, km.labels, km.centroids);
    km.inertia.push_back(inertia_of(points, km.labels, km.centroids));
    km.iterations = it + 1;
    if (!changed) break;
  }
  return km;
}

Selection select_representatives(const Matrix& points, const KMeans& km) {
  if (km.labels.size() != points.rows || km.centroids.cols != points.cols) {
    throw DimensionError("selection: labels or centroids do not match the points");
  }
  Selection sel;
  const int k = static_cast<int>(km.centroids.rows);
  for (int c = 0; c < k; ++c) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points.rows; ++i) {
      if (km.labels[i] != c) continue;
      const double di = sq_dist(points.row(i), km.centroids.row(c), points.cols);
      if (di < best_d) best_d = di, best = static_cast<int>(i);
    }
    if (best < 0) continue;
    sel.clusters.push_back({c, best, std::sqrt(best_d)});
    sel.ids.push_back(best);
  }
  std::sort(sel.ids.begin(), sel.ids.end());
  sel.ids.erase(std::unique(sel.ids.begin(), sel.ids.end()), sel.ids.end());
  return sel;
}

Selection select(const datagen::Dataset& ds, const SelectionConfig& cfg) {
  cfg.validate(static_cast<int>(ds.size()));
  const auto p = pca_project(ds, cfg);
  const auto km = kmeans(p.scores, cfg.n_select, cfg.seed, cfg.max_iters);
  auto sel = select_representatives(p.scores, km);
  sel.components = static_cast<int>(p.scores.cols);
  sel.warnings = p.warnings;
  return sel;
}

}  // namespace gns::selection
