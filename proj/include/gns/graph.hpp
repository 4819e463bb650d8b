#pragma once

// Periodic 8-neighbor grid graphs and per-state node/edge features.

#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace gns::graph {

using Index = std::uint32_t;

/// Directed edges sender -> receiver, stored receiver-major with incoming edges
/// in the fixed neighbor order E, W, N, S, NE, NW, SE, SW.
struct Topology {
  int nx = 0;
  int ny = 0;
  std::vector<Index> senders;
  std::vector<Index> receivers;
  std::vector<double> x;  // node coordinates in [0, 1)
  std::vector<double> y;
  std::vector<int> ix;  // integer grid position of each node
  std::vector<int> iy;

  int n_nodes() const { return static_cast<int>(x.size()); }
  std::size_t n_edges() const { return senders.size(); }
};

inline constexpr int kNeighbors = 8;

/// Throws ConfigError when nx or ny < 3 (the stencil would repeat neighbors).
Topology build_topology(int nx, int ny);

/// Relabels node i as perm[i]; coordinates travel with their node and each
/// receiver keeps its incoming-edge order. Throws IndexError on a non-permutation.
Topology permute_nodes(const Topology& topo, std::span<const Index> perm);

/// perm[i] for shifting the grid by (sx, sy) cells: node (ix, iy) -> (ix+sx, iy+sy).
std::vector<Index> translation_permutation(int nx, int ny, int sx, int sy);

struct FeatureConfig {
  double omega = 2.0 * std::numbers::pi;
  int channels = 1;

  void validate() const;
};

inline int node_width(int channels) { return channels + 6; }
inline int edge_width(int channels) { return channels + 6; }

/// Row-major feature matrices.
struct GraphFeatures {
  int channels = 0;
  std::vector<double> node;  // [n][C + 6]: fields, x, y, sin ωx, cos ωx, sin ωy, cos ωy
  std::vector<double> edge;  // [e][C + 6]: Δx, Δy, d, Δx/d, Δy/d, Δf per channel, |Δf|
};

/// Features of state u (node-major, channels interleaved). Displacements use the
/// minimum image, Δ = sender - receiver. Throws InputError on NaN, DimensionError on size.
GraphFeatures build_features(std::span<const double> u, const Topology& topo, const FeatureConfig& cfg);

}  // namespace gns::graph
