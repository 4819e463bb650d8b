#include "gns/graph.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

#include "gns/errors.hpp"

namespace gns::graph {

namespace {

constexpr std::array<std::array<int, 2>, kNeighbors> kOffsets{{
    {1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, 1}, {1, -1}, {-1, -1},
}};

// Minimum-image cell offset, in [-n/2, n/2).
int wrap(int d, int n) {
  d = ((d % n) + n) % n;
  return 2 * d >= n ? d - n : d;
}

}  // namespace

Topology build_topology(int nx, int ny) {
  if (nx < 3 || ny < 3) {
    throw ConfigError("grid " + std::to_string(nx) + "x" + std::to_string(ny) +
                      " too small for an 8-neighbor stencil (need >= 3 per axis)");
  }
  Topology t;
  t.nx = nx;
  t.ny = ny;
  const std::size_t n = static_cast<std::size_t>(nx) * ny;
  t.x.resize(n);
  t.y.resize(n);
  t.ix.resize(n);
  t.iy.resize(n);
  t.senders.reserve(n * kNeighbors);
  t.receivers.reserve(n * kNeighbors);
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      const Index r = static_cast<Index>(iy * nx + ix);
      t.x[r] = static_cast<double>(ix) / nx;
      t.y[r] = static_cast<double>(iy) / ny;
      t.ix[r] = ix;
      t.iy[r] = iy;
      for (const auto& [ox, oy] : kOffsets) {
        const int sx = (ix + ox + nx) % nx, sy = (iy + oy + ny) % ny;
        t.senders.push_back(static_cast<Index>(sy * nx + sx));
        t.receivers.push_back(r);
      }
    }
  }
  return t;
}

Topology permute_nodes(const Topology& topo, std::span<const Index> perm) {
  const std::size_t n = topo.x.size();
  if (perm.size() != n) throw IndexError("permutation length does not match node count");
  std::vector<Index> inverse(n, static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (perm[i] >= n || inverse[perm[i]] != n) throw IndexError("not a permutation of the node labels");
    inverse[perm[i]] = static_cast<Index>(i);
  }
  Topology out;
  out.nx = topo.nx;
  out.ny = topo.ny;
  out.x.resize(n);
  out.y.resize(n);
  out.ix.resize(n);
  out.iy.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.x[perm[i]] = topo.x[i];
    out.y[perm[i]] = topo.y[i];
    out.ix[perm[i]] = topo.ix[i];
    out.iy[perm[i]] = topo.iy[i];
  }
  // Edges are receiver-major in blocks of kNeighbors: move whole blocks.
  out.senders.resize(topo.senders.size());
  out.receivers.resize(topo.receivers.size());
  for (std::size_t r_new = 0; r_new < n; ++r_new) {
    const std::size_t r_old = inverse[r_new];
    for (int k = 0; k < kNeighbors; ++k) {
      const std::size_t src = r_old * kNeighbors + k, dst = r_new * kNeighbors + k;
      out.senders[dst] = perm[topo.senders[src]];
      out.receivers[dst] = static_cast<Index>(r_new);
    }
  }
  return out;
}

std::vector<Index> translation_permutation(int nx, int ny, int sx, int sy) {
  std::vector<Index> perm(static_cast<std::size_t>(nx) * ny);
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      const int jx = ((ix + sx) % nx + nx) % nx, jy = ((iy + sy) % ny + ny) % ny;
      perm[iy * nx + ix] = static_cast<Index>(jy * nx + jx);
    }
  }
  return perm;
}

void FeatureConfig::validate() const {
  if (!(omega > 0.0)) throw ConfigError("fourier frequency must be positive");
  if (channels < 1) throw ConfigError("channel count must be positive");
}

GraphFeatures build_features(std::span<const double> u, const Topology& topo, const FeatureConfig& cfg) {
  cfg.validate();
  const int C = cfg.channels;
  const std::size_t n = topo.x.size(), e = topo.n_edges();
  if (u.size() != n * C) {
    throw DimensionError("state has " + std::to_string(u.size()) + " values, expected " +
                         std::to_string(n) + " nodes x " + std::to_string(C) + " channels");
  }
  for (double v : u) {
    if (!std::isfinite(v)) throw InputError("state contains NaN or Inf");
  }
  GraphFeatures f;
  f.channels = C;
  const int wn = node_width(C), we = edge_width(C);
  f.node.resize(n * wn);
  f.edge.resize(e * we);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = f.node.data() + i * wn;
    for (int c = 0; c < C; ++c) row[c] = u[i * C + c];
    const double x = topo.x[i], y = topo.y[i];
    row[C] = x;
    row[C + 1] = y;
    row[C + 2] = std::sin(cfg.omega * x);
    row[C + 3] = std::cos(cfg.omega * x);
    row[C + 4] = std::sin(cfg.omega * y);
    row[C + 5] = std::cos(cfg.omega * y);
  }
  for (std::size_t k = 0; k < e; ++k) {
    const std::size_t s = topo.senders[k], r = topo.receivers[k];
    double* row = f.edge.data() + k * we;
    const double dx = static_cast<double>(wrap(topo.ix[s] - topo.ix[r], topo.nx)) / topo.nx;
    const double dy = static_cast<double>(wrap(topo.iy[s] - topo.iy[r], topo.ny)) / topo.ny;
    const double d = std::hypot(dx, dy);
    row[0] = dx;
    row[1] = dy;
    row[2] = d;
    row[3] = dx / d;
    row[4] = dy / d;
    double norm2 = 0.0;
    for (int c = 0; c < C; ++c) {
      const double df = u[s * C + c] - u[r * C + c];
      row[5 + c] = df;
      norm2 += df * df;
    }
    row[5 + C] = std::sqrt(norm2);
  }
  return f;
}

}  // namespace gns::graph
