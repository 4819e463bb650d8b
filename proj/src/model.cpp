#include "gns/model.hpp"

#include <cmath>
#include <functional>
#include <random>

#include "gns/errors.hpp"

namespace gns::model {

namespace {

using ad::Shape;

using Filler = std::function<void(Tensor&, std::size_t fan_in, std::size_t fan_out)>;

Linear make_linear(std::size_t in, std::size_t out, const Filler& fill) {
  Linear l{Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
  fill(l.weight, in, out);
  return l;
}

/// widths = [in, w1, ..., out]
Mlp make_mlp(const std::vector<std::size_t>& widths, bool activate_output, const Filler& fill) {
  Mlp m;
  m.activate_output = activate_output;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) m.layers.push_back(make_linear(widths[i], widths[i + 1], fill));
  return m;
}

LayerNormParams make_norm(std::size_t d) {
  LayerNormParams n{Tensor::zeros({d}, true), Tensor::zeros({d}, true)};
  for (double& g : n.gamma.mutable_values()) g = 1.0;
  return n;
}

GnsParams build(const GnsConfig& cfg, const Filler& fill) {
  cfg.validate();
  const std::size_t L = cfg.latent, H = cfg.hidden;
  GnsParams p;
  p.node_encoder = make_mlp({std::size_t(cfg.node_in()), H, L}, true, fill);
  p.edge_encoder = make_mlp({std::size_t(cfg.edge_in()), H, L}, true, fill);
  for (int l = 0; l < cfg.layers; ++l) {
    ProcessorLayer layer;
    layer.message = make_mlp({3 * L, H, L}, false, fill);
    layer.node_update = make_mlp({2 * L, H, L}, false, fill);
    layer.edge_update = make_mlp({3 * L, H, L}, false, fill);
    layer.node_norm = make_norm(L);
    layer.edge_norm = make_norm(L);
    p.processor.push_back(std::move(layer));
  }
  p.decoder = make_mlp({L, H, std::size_t(cfg.channels)}, false, fill);
  return p;
}

void add_mlp(std::vector<NamedTensor>& out, const std::string& prefix, const Mlp& m) {
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    out.push_back({prefix + "." + std::to_string(i) + ".weight", m.layers[i].weight});
    out.push_back({prefix + "." + std::to_string(i) + ".bias", m.layers[i].bias});
  }
}

Tensor apply_mlp(const Mlp& m, std::span<const ad::MlpPart> parts, std::size_t rows) {
  if (m.layers.size() != 2) throw ContractError("processor MLPs have exactly two layers");
  const Tensor y = ad::fused_mlp2(parts, rows, m.layers[0].weight, m.layers[0].bias, m.layers[1].weight,
                                  m.layers[1].bias);
  return m.activate_output ? ad::gelu(y) : y;
}

/// MLP on [h_receiver, h_sender, z] without materializing the concatenation.
Tensor edge_mlp(const Mlp& m, const Tensor& h, const Tensor& z, const EdgeIndex& e) {
  const std::size_t L = h.cols();
  if (m.layers.front().weight.rows() != 2 * L + z.cols()) throw DimensionError("edge MLP input width mismatch");
  const ad::MlpPart parts[] = {{h, e.receivers}, {h, e.senders}, {z, {}}};
  return apply_mlp(m, parts, z.rows());
}

/// MLP on [h, m].
Tensor node_mlp(const Mlp& m, const Tensor& h, const Tensor& agg) {
  if (m.layers.front().weight.rows() != h.cols() + agg.cols()) throw DimensionError("node MLP input width mismatch");
  const ad::MlpPart parts[] = {{h, {}}, {agg, {}}};
  return apply_mlp(m, parts, h.rows());
}

Stats unit_stats(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 1.0)}; }

}  // namespace

void GnsConfig::validate() const {
  if (channels < 1 || latent < 1 || hidden < 1 || layers < 0) {
    throw ConfigError("model: widths must be positive and layers non-negative");
  }
  if (latent < 2) throw ConfigError("model: latent width must be >= 2 for layer normalization");
}

Tensor Mlp::operator()(const Tensor& x) const {
  if (layers.size() == 2) {
    const ad::MlpPart part[] = {{x, {}}};
    return apply_mlp(*this, part, x.rows());
  }
  Tensor y = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i > 0) y = ad::gelu(y);
    y = layers[i](y);
  }
  return activate_output ? ad::gelu(y) : y;
}

std::vector<NamedTensor> GnsParams::named() const {
  std::vector<NamedTensor> out;
  add_mlp(out, "node_encoder", node_encoder);
  add_mlp(out, "edge_encoder", edge_encoder);
  for (std::size_t l = 0; l < processor.size(); ++l) {
    const std::string p = "processor." + std::to_string(l);
    const auto& layer = processor[l];
    add_mlp(out, p + ".message", layer.message);
    add_mlp(out, p + ".node_update", layer.node_update);
    add_mlp(out, p + ".edge_update", layer.edge_update);
    out.push_back({p + ".node_norm.gamma", layer.node_norm.gamma});
    out.push_back({p + ".node_norm.beta", layer.node_norm.beta});
    out.push_back({p + ".edge_norm.gamma", layer.edge_norm.gamma});
    out.push_back({p + ".edge_norm.beta", layer.edge_norm.beta});
  }
  add_mlp(out, "decoder", decoder);
  return out;
}

std::vector<Tensor> GnsParams::tensors() const {
  std::vector<Tensor> out;
  for (auto& nt : named()) out.push_back(nt.tensor);
  return out;
}

std::size_t GnsParams::count() const {
  std::size_t n = 0;
  for (const auto& nt : named()) n += nt.tensor.numel();
  return n;
}

GnsParams GnsParams::clone() const {
  GnsParams p = *this;
  auto fix_mlp = [](Mlp& m) {
    for (auto& l : m.layers) {
      l.weight = l.weight.clone();
      l.bias = l.bias.clone();
    }
  };
  fix_mlp(p.node_encoder);
  fix_mlp(p.edge_encoder);
  fix_mlp(p.decoder);
  for (auto& layer : p.processor) {
    fix_mlp(layer.message);
    fix_mlp(layer.node_update);
    fix_mlp(layer.edge_update);
    for (auto* n : {&layer.node_norm, &layer.edge_norm}) {
      n->gamma = n->gamma.clone();
      n->beta = n->beta.clone();
    }
  }
  return p;
}

GnsParams init_params(const GnsConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return build(cfg, [&](Tensor& w, std::size_t in, std::size_t out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : w.mutable_values()) v = dist(rng);
  });
}

GnsParams params_from_values(const GnsConfig& cfg, std::span<const double> flat) {
  GnsParams p = build(cfg, [](Tensor&, std::size_t, std::size_t) {});
  if (flat.size() != p.count()) {
    throw DimensionError("parameter vector has " + std::to_string(flat.size()) + " values, model needs " +
                         std::to_string(p.count()));
  }
  std::size_t off = 0;
  for (auto& nt : p.named()) {
    auto v = nt.tensor.mutable_values();
    std::copy(flat.begin() + off, flat.begin() + off + v.size(), v.begin());
    off += v.size();
  }
  return p;
}

std::vector<double> flatten_values(const GnsParams& params) {
  std::vector<double> out;
  out.reserve(params.count());
  for (const auto& nt : params.named()) {
    auto v = nt.tensor.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

Latent encode(const GnsParams& p, const Tensor& node_features, const Tensor& edge_features) {
  const auto& nw = p.node_encoder.layers.front().weight;
  const auto& ew = p.edge_encoder.layers.front().weight;
  if (node_features.cols() != nw.rows() || edge_features.cols() != ew.rows()) {
    throw ConfigError("model: feature widths (" + std::to_string(node_features.cols()) + ", " +
                      std::to_string(edge_features.cols()) + ") do not match the encoders (" +
                      std::to_string(nw.rows()) + ", " + std::to_string(ew.rows()) + ")");
  }
  return {p.node_encoder(node_features), p.edge_encoder(edge_features)};
}

Tensor process(const GnsParams& p, const Latent& latent, const EdgeIndex& edges) {
  Tensor h = latent.nodes, z = latent.edges;
  for (const auto& layer : p.processor) {
    const Tensor msg = edge_mlp(layer.message, h, z, edges);
    const Tensor agg = ad::scatter_mean(msg, edges.receivers, edges.n_nodes);
    const Tensor dz = edge_mlp(layer.edge_update, h, z, edges);
    const Tensor dh = node_mlp(layer.node_update, h, agg);
    h = ad::layer_norm(ad::add(h, dh), layer.node_norm.gamma, layer.node_norm.beta);
    z = ad::layer_norm(ad::add(z, dz), layer.edge_norm.gamma, layer.edge_norm.beta);
  }
  return h;
}

Tensor decode(const GnsParams& p, const Tensor& h) { return p.decoder(h); }

Tensor forward_normalized(const GnsParams& p, const Tensor& node_features, const Tensor& edge_features,
                          const EdgeIndex& edges) {
  if (node_features.rows() != edges.n_nodes || edge_features.rows() != edges.senders.size()) {
    throw DimensionError("model: feature rows do not match the graph");
  }
  return decode(p, process(p, encode(p, node_features, edge_features), edges));
}

// ---- normalizer ------------------------------------------------------------

Normalizer Normalizer::identity(int channels) {
  Normalizer n;
  n.channels = channels;
  n.field = unit_stats(channels);
  n.edge_diff = unit_stats(channels);
  n.edge_norm = unit_stats(1);
  n.target = unit_stats(channels);
  return n;
}

void Normalizer::normalize(graph::GraphFeatures& f) const {
  if (f.channels != channels) throw DimensionError("normalizer channel count does not match the features");
  const int C = channels;
  const int wn = graph::node_width(C), we = graph::edge_width(C);
  for (std::size_t r = 0; r < f.node.size() / wn; ++r) {
    for (int c = 0; c < C; ++c) f.node[r * wn + c] = field.apply(f.node[r * wn + c], c);
  }
  for (std::size_t r = 0; r < f.edge.size() / we; ++r) {
    double* row = f.edge.data() + r * we;
    for (int c = 0; c < C; ++c) row[5 + c] = edge_diff.apply(row[5 + c], c);
    row[5 + C] = edge_norm.apply(row[5 + C], 0);
  }
}

void Normalizer::normalize_target(std::span<double> dudt) const {
  for (std::size_t i = 0; i < dudt.size(); ++i) dudt[i] = target.apply(dudt[i], i % channels);
}

void Normalizer::denormalize_target(std::span<double> dudt) const {
  for (std::size_t i = 0; i < dudt.size(); ++i) dudt[i] = target.invert(dudt[i], i % channels);
}

bool Normalizer::operator==(const Normalizer& o) const {
  auto same = [](const Stats& a, const Stats& b) { return a.mean == b.mean && a.std == b.std; };
  return channels == o.channels && same(field, o.field) && same(edge_diff, o.edge_diff) &&
         same(edge_norm, o.edge_norm) && same(target, o.target);
}

// ---- batching and inference --------------------------------------------------

BatchedGraph::BatchedGraph(const graph::Topology& topo, int copies) {
  const std::size_t n = topo.x.size(), e = topo.n_edges();
  n_nodes = n * copies;
  senders.resize(e * copies);
  receivers.resize(e * copies);
  for (int b = 0; b < copies; ++b) {
    const auto off = static_cast<graph::Index>(b * n);
    for (std::size_t k = 0; k < e; ++k) {
      senders[b * e + k] = topo.senders[k] + off;
      receivers[b * e + k] = topo.receivers[k] + off;
    }
  }
}

BatchFeatures batch_features(std::span<const double> states, int count, const graph::Topology& topo,
                             const graph::FeatureConfig& fcfg, const Normalizer& norm) {
  const std::size_t n = topo.x.size(), e = topo.n_edges();
  const std::size_t per_state = n * fcfg.channels;
  if (count < 1 || states.size() != per_state * count) throw DimensionError("batch: state buffer size mismatch");
  const std::size_t wn = graph::node_width(fcfg.channels), we = graph::edge_width(fcfg.channels);
  Tensor nodes = Tensor::zeros({n * count, wn});
  Tensor edges = Tensor::zeros({e * count, we});
  auto nv = nodes.mutable_values();
  auto ev = edges.mutable_values();
  for (int b = 0; b < count; ++b) {
    auto f = graph::build_features(states.subspan(b * per_state, per_state), topo, fcfg);
    norm.normalize(f);
    std::copy(f.node.begin(), f.node.end(), nv.begin() + b * n * wn);
    std::copy(f.edge.begin(), f.edge.end(), ev.begin() + b * e * we);
  }
  return {nodes, edges};
}

Simulator::Simulator(GnsConfig cfg, GnsParams params, Normalizer norm, graph::Topology topo)
    : cfg_(cfg), params_(std::move(params)), norm_(std::move(norm)), topo_(std::move(topo)) {
  cfg_.validate();
  if (norm_.channels != cfg_.channels) throw ConfigError("simulator: normalizer/model channel mismatch");
  features_.channels = cfg_.channels;
}

std::vector<double> Simulator::derivative(std::span<const double> u) const { return derivative_batch(u, 1); }

std::vector<double> Simulator::derivative_batch(std::span<const double> states, int count) const {
  const auto feats = batch_features(states, count, topo_, features_, norm_);
  const BatchedGraph g(topo_, count);
  const Tensor y = forward_normalized(params_, feats.nodes, feats.edges, g.index());
  std::vector<double> out(y.values().begin(), y.values().end());
  norm_.denormalize_target(out);
  return out;
}

}  // namespace gns::model
