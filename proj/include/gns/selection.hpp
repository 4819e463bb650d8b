#pragma once

// Representative training-trajectory selection: project flattened samples onto
// their leading principal components, cluster the scores with k-means, keep the
// member nearest each centroid.

#include <cstdint>
#include <string>
#include <vector>

#include "gns/datagen.hpp"

namespace gns::selection {

enum class FlattenMode { full_trajectory, initial_condition };

std::string_view flatten_mode_name(FlattenMode m);
FlattenMode parse_flatten_mode(std::string_view name);

struct SelectionConfig {
  int n_components = 20;
  int n_select = 30;
  int max_iters = 300;
  std::uint64_t seed = 0;
  FlattenMode flatten = FlattenMode::full_trajectory;

  /// Throws ConfigError unless 1 <= n_components, 1 <= n_select <= n_samples.
  void validate(int n_samples) const;
};

/// 20 for the 32x32 cases, 50 for coupled Burgers and shallow water.
int default_components(datagen::PdeCase pde);

/// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }
};

/// One sample per row.
Matrix flatten(const datagen::Dataset& ds, FlattenMode mode);

struct Pca {
  Matrix scores;      // [N, m]
  Matrix components;  // [m, D], orthonormal rows
  std::vector<double> mean;
  std::vector<double> singular_values;
  std::vector<std::string> warnings;
};

/// Top-m principal directions of the centered rows, each signed so its
/// largest-magnitude entry is positive. m is reduced to the numerical rank
/// (at least 1) with a warning when it exceeds it. Throws ConfigError for N < 2.
Pca pca(const Matrix& samples, int m);
Pca pca_project(const datagen::Dataset& ds, const SelectionConfig& cfg);

struct KMeans {
  Matrix centroids;  // [k, m]
  std::vector<int> labels;
  std::vector<double> inertia;  // after each Lloyd iteration
  int iterations = 0;
};

/// k-means++ seeding then Lloyd iterations until the assignment stops changing.
/// An emptied cluster takes the point farthest from its centroid in the largest cluster.
KMeans kmeans(const Matrix& points, int k, std::uint64_t seed, int max_iters = 300);

struct Representative {
  int cluster = 0;
  int id = 0;
  double distance = 0.0;
};

struct Selection {
  std::vector<int> ids;  // ascending
  std::vector<Representative> clusters;  // by cluster index
  int components = 0;
  std::vector<std::string> warnings;
};

/// Member nearest each centroid, ties to the lower id.
Selection select_representatives(const Matrix& points, const KMeans& km);

Selection select(const datagen::Dataset& ds, const SelectionConfig& cfg);

}  // namespace gns::selection
