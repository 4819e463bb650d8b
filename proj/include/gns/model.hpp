#pragma once

// Encoder–processor–decoder graph network predicting du/dt on grid graphs.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gns/graph.hpp"
#include "gns/tensor.hpp"

namespace gns::model {

using ad::Tensor;

struct GnsConfig {
  int channels = 1;
  int latent = 64;
  int hidden = 64;
  int layers = 6;

  int node_in() const { return graph::node_width(channels); }
  int edge_in() const { return graph::edge_width(channels); }
  /// Throws ConfigError unless widths are positive and layers >= 0.
  void validate() const;
  bool operator==(const GnsConfig&) const = default;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Tensor operator()(const Tensor& x) const { return ad::linear(x, weight, bias); }
};

/// Linear layers joined by GELU; `activate_output` adds a trailing GELU.
struct Mlp {
  std::vector<Linear> layers;
  bool activate_output = false;
  Tensor operator()(const Tensor& x) const;
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

struct ProcessorLayer {
  Mlp message;      // f_θ on [h_receiver, h_sender, z]
  Mlp node_update;  // f_φ on [h, mean message]
  Mlp edge_update;  // f_ψ on [h_receiver, h_sender, z]
  LayerNormParams node_norm;
  LayerNormParams edge_norm;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GnsParams {
  Mlp node_encoder;
  Mlp edge_encoder;
  std::vector<ProcessorLayer> processor;
  Mlp decoder;

  /// Every parameter in a fixed order with dotted names.
  std::vector<NamedTensor> named() const;
  std::vector<Tensor> tensors() const;
  std::size_t count() const;
  /// Detached deep copy.
  GnsParams clone() const;
};

/// Glorot-uniform weights, zero biases, unit LayerNorm scale; deterministic by seed.
GnsParams init_params(const GnsConfig& cfg, std::uint64_t seed);

/// Builds a parameter set of the right shapes from flat values in named() order.
GnsParams params_from_values(const GnsConfig& cfg, std::span<const double> flat);
std::vector<double> flatten_values(const GnsParams& params);

/// Edge lists of a (possibly batched) graph.
struct EdgeIndex {
  std::span<const graph::Index> senders;
  std::span<const graph::Index> receivers;
  std::size_t n_nodes = 0;
};

struct Latent {
  Tensor nodes;
  Tensor edges;
};

Latent encode(const GnsParams& p, const Tensor& node_features, const Tensor& edge_features);
Tensor process(const GnsParams& p, const Latent& latent, const EdgeIndex& edges);
Tensor decode(const GnsParams& p, const Tensor& h);

/// encode -> process -> decode on normalized features; returns the normalized derivative.
Tensor forward_normalized(const GnsParams& p, const Tensor& node_features, const Tensor& edge_features,
                          const EdgeIndex& edges);

/// Per-channel standardization statistics.
struct Stats {
  std::vector<double> mean;
  std::vector<double> std;

  double apply(double v, std::size_t c) const { return (v - mean[c]) / std[c]; }
  double invert(double v, std::size_t c) const { return v * std[c] + mean[c]; }
};

inline constexpr double kStdFloor = 1e-8;

/// Standardizes field channels, edge field differences, their norm, and targets.
struct Normalizer {
  int channels = 0;
  Stats field;
  Stats edge_diff;
  Stats edge_norm;  // one entry
  Stats target;

  bool fitted() const { return channels > 0; }
  /// Identity statistics (mean 0, std 1) for C channels.
  static Normalizer identity(int channels);
  void normalize(graph::GraphFeatures& f) const;
  void normalize_target(std::span<double> dudt) const;
  void denormalize_target(std::span<double> dudt) const;
  bool operator==(const Normalizer&) const;
};

/// Repeats one topology B times as a block-diagonal graph.
struct BatchedGraph {
  std::vector<graph::Index> senders;
  std::vector<graph::Index> receivers;
  std::size_t n_nodes = 0;

  BatchedGraph(const graph::Topology& topo, int copies);
  EdgeIndex index() const { return {senders, receivers, n_nodes}; }
};

/// Stateless inference helper bundling everything the forward pass needs.
class Simulator {
 public:
  Simulator(GnsConfig cfg, GnsParams params, Normalizer norm, graph::Topology topo);

  /// du/dt in physical units for one state (node-major, channels interleaved).
  std::vector<double> derivative(std::span<const double> u) const;
  /// Same for several states at once; states are concatenated.
  std::vector<double> derivative_batch(std::span<const double> states, int count) const;

  const GnsConfig& config() const { return cfg_; }
  const graph::Topology& topology() const { return topo_; }
  const GnsParams& params() const { return params_; }
  const Normalizer& normalizer() const { return norm_; }

 private:
  GnsConfig cfg_;
  GnsParams params_;
  Normalizer norm_;
  graph::Topology topo_;
  graph::FeatureConfig features_;
};

/// Normalized node/edge feature tensors for a batch of states on one topology.
struct BatchFeatures {
  Tensor nodes;
  Tensor edges;
};
BatchFeatures batch_features(std::span<const double> states, int count, const graph::Topology& topo,
                             const graph::FeatureConfig& fcfg, const Normalizer& norm);

}  // namespace gns::model
