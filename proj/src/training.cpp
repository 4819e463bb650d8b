#include "gns/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

#include "gns/errors.hpp"

namespace gns::training {

namespace {

struct Moments {
  std::vector<double> sum, sum2;
  std::size_t count = 0;

  explicit Moments(std::size_t c) : sum(c, 0.0), sum2(c, 0.0) {}

  model::Stats finish(const std::vector<double>& mean_in) const {
    model::Stats s;
    s.mean = mean_in;
    s.std.resize(sum.size());
    for (std::size_t c = 0; c < sum.size(); ++c) {
      s.std[c] = std::max(std::sqrt(sum2[c] / static_cast<double>(count)), model::kStdFloor);
    }
    return s;
  }
};

std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  return std::mt19937_64(seq);
}

/// Pair indices visited in one epoch, already shuffled.
std::vector<std::size_t> epoch_order(std::size_t n_pairs, int per_traj_available, int n_traj,
                                     const TrainConfig& cfg, int epoch) {
  auto rng = epoch_rng(cfg.seed, epoch);
  std::vector<std::size_t> order;
  if (cfg.pairs_per_trajectory <= 0 || cfg.pairs_per_trajectory >= per_traj_available) {
    order.resize(n_pairs);
    std::iota(order.begin(), order.end(), 0);
  } else {
    // One time index from each of K equal bands of [0, Nt - 1).
    const int bands = cfg.pairs_per_trajectory;
    for (int tr = 0; tr < n_traj; ++tr) {
      for (int k = 0; k < bands; ++k) {
        const int lo = k * per_traj_available / bands, hi = (k + 1) * per_traj_available / bands;
        std::uniform_int_distribution<int> pick(lo, hi - 1);
        order.push_back(static_cast<std::size_t>(tr) * per_traj_available + pick(rng));
      }
    }
  }
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace

std::vector<OneStepPair> build_pairs(const datagen::Dataset& ds, std::span<const int> ids) {
  if (ids.empty()) throw ConfigError("training: empty trajectory selection");
  if (ds.nt < 2) throw ConfigError("training: trajectories need at least two snapshots");
  std::vector<OneStepPair> pairs;
  pairs.reserve(ids.size() * (ds.nt - 1));
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= ds.size()) {
      throw IndexError("training: trajectory id " + std::to_string(id) + " not in dataset of " +
                       std::to_string(ds.size()));
    }
    const auto& tr = ds.trajectories[id];
    for (int t = 0; t + 1 < tr.nt; ++t) {
      OneStepPair p;
      p.trajectory = id;
      p.time = t;
      const auto a = tr.snapshot(t), b = tr.snapshot(t + 1);
      p.input.assign(a.begin(), a.end());
      p.target.resize(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) p.target[i] = (b[i] - a[i]) / tr.dt_coarse;
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

model::Normalizer fit_normalizer(std::span<const OneStepPair> pairs, const graph::Topology& topo, int channels) {
  if (pairs.empty()) throw ConfigError("normalizer: no training pairs");
  const std::size_t C = channels;
  const std::size_t n = topo.x.size();

  auto per_channel_mean = [&](auto&& value_at, std::size_t count_per_pair) {
    std::vector<double> mean(C, 0.0);
    for (const auto& p : pairs) {
      for (std::size_t k = 0; k < count_per_pair; ++k) {
        for (std::size_t c = 0; c < C; ++c) mean[c] += value_at(p, k, c);
      }
    }
    for (double& m : mean) m /= static_cast<double>(pairs.size() * count_per_pair);
    return mean;
  };
  auto centered = [&](auto&& value_at, std::size_t count_per_pair, const std::vector<double>& mean) {
    Moments m(C);
    for (const auto& p : pairs) {
      for (std::size_t k = 0; k < count_per_pair; ++k) {
        for (std::size_t c = 0; c < C; ++c) {
          const double d = value_at(p, k, c) - mean[c];
          m.sum2[c] += d * d;
        }
      }
    }
    m.count = pairs.size() * count_per_pair;
    return m.finish(mean);
  };

  for (const auto& p : pairs) {
    if (p.input.size() != n * C || p.target.size() != n * C) throw DimensionError("normalizer: pair size mismatch");
  }
  auto field_at = [&](const OneStepPair& p, std::size_t i, std::size_t c) { return p.input[i * C + c]; };
  auto target_at = [&](const OneStepPair& p, std::size_t i, std::size_t c) { return p.target[i * C + c]; };
  auto diff_at = [&](const OneStepPair& p, std::size_t k, std::size_t c) {
    return p.input[topo.senders[k] * C + c] - p.input[topo.receivers[k] * C + c];
  };
  const std::size_t e = topo.n_edges();

  model::Normalizer norm;
  norm.channels = channels;
  norm.field = centered(field_at, n, per_channel_mean(field_at, n));
  norm.target = centered(target_at, n, per_channel_mean(target_at, n));
  norm.edge_diff = centered(diff_at, e, per_channel_mean(diff_at, e));

  auto norm_at = [&](const OneStepPair& p, std::size_t k) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double d = diff_at(p, k, c);
      s += d * d;
    }
    return std::sqrt(s);
  };
  double mean = 0.0;
  for (const auto& p : pairs) {
    for (std::size_t k = 0; k < e; ++k) mean += norm_at(p, k);
  }
  mean /= static_cast<double>(pairs.size() * e);
  double var = 0.0;
  for (const auto& p : pairs) {
    for (std::size_t k = 0; k < e; ++k) var += (norm_at(p, k) - mean) * (norm_at(p, k) - mean);
  }
  var /= static_cast<double>(pairs.size() * e);
  norm.edge_norm = {{mean}, {std::max(std::sqrt(var), model::kStdFloor)}};
  return norm;
}

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw ConfigError("train: epochs and batch size must be positive");
  if (!(lr > 0.0) || !(lr_final > 0.0) || lr_final > lr) throw ConfigError("train: need 0 < lr_final <= lr");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint interval must be >= 0");
  if (pairs_per_trajectory < 0) throw ConfigError("train: pairs per trajectory must be >= 0");
  if (input_noise < 0.0) throw ConfigError("train: input noise must be >= 0");
}

TrainConfig default_train_config(datagen::PdeCase pde) {
  TrainConfig c;
  switch (pde) {
    case datagen::PdeCase::burgers_scalar: c.epochs = 600; c.batch_size = 4; break;
    case datagen::PdeCase::burgers_coupled: c.epochs = 400; c.batch_size = 4; break;
    case datagen::PdeCase::allen_cahn: c.epochs = 500; c.batch_size = 4; break;
    case datagen::PdeCase::swe: c.epochs = 600; c.batch_size = 2; break;
  }
  return c;
}

double cosine_lr(const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 1) return cfg.lr;
  const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps - 1), 0.0, 1.0);
  return cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + std::cos(std::numbers::pi * frac));
}

TrainState train(const datagen::Dataset& ds, std::span<const int> ids, const TrainConfig& cfg,
                 const model::GnsConfig& model_cfg, std::optional<TrainState> resume, const TrainHooks& hooks) {
  cfg.validate();
  model_cfg.validate();
  if (model_cfg.channels != ds.channels) {
    throw ConfigError("train: model has " + std::to_string(model_cfg.channels) + " channels, dataset has " +
                      std::to_string(ds.channels));
  }
  const auto pairs = build_pairs(ds, ids);
  const auto topo = graph::build_topology(ds.grid.nx, ds.grid.ny);
  const graph::FeatureConfig fcfg{2.0 * std::numbers::pi, ds.channels};

  TrainState state;
  if (resume) {
    state = std::move(*resume);
    state.params = state.params.clone();
    if (!(state.model_cfg == model_cfg)) throw ConfigError("train: resume checkpoint has a different model config");
    if (state.seed != cfg.seed) throw ConfigError("train: resume checkpoint was trained with a different seed");
    if (state.epoch > cfg.epochs) throw ConfigError("train: checkpoint is already past the requested epochs");
  } else {
    state.model_cfg = model_cfg;
    state.params = model::init_params(model_cfg, cfg.seed);
    state.normalizer = fit_normalizer(pairs, topo, ds.channels);
    state.seed = cfg.seed;
  }
  auto params = state.params.tensors();
  if (!resume || state.adam.first_moment.size() != params.size()) {
    const std::int64_t step = resume ? state.adam.step : 0;
    state.adam = ad::AdamState(ad::AdamHyper{cfg.lr}, params);
    state.adam.step = step;
  }

  const int per_traj = ds.nt - 1;
  const std::size_t per_epoch = cfg.pairs_per_trajectory > 0 && cfg.pairs_per_trajectory < per_traj
                                    ? static_cast<std::size_t>(cfg.pairs_per_trajectory) * ids.size()
                                    : pairs.size();
  const std::int64_t steps_per_epoch = (per_epoch + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

  const std::size_t state_size = pairs.front().input.size();
  std::map<int, model::BatchedGraph> graphs;
  std::vector<double> inputs, targets;
  std::normal_distribution<double> noise(0.0, 1.0);
  const double wall_offset = state.history.empty() ? 0.0 : state.history.back().wall_seconds;
  const auto start = std::chrono::steady_clock::now();

  for (int epoch = state.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(pairs.size(), per_traj, static_cast<int>(ids.size()), cfg, epoch);
    auto noise_rng = epoch_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL, epoch);
    double loss_sum = 0.0;
    double lr = cfg.lr;
    std::int64_t steps = 0;
    try {
      for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
        const int b = static_cast<int>(std::min<std::size_t>(cfg.batch_size, order.size() - begin));
        inputs.resize(state_size * b);
        targets.resize(state_size * b);
        for (int k = 0; k < b; ++k) {
          const auto& p = pairs[order[begin + k]];
          std::copy(p.input.begin(), p.input.end(), inputs.begin() + k * state_size);
          std::copy(p.target.begin(), p.target.end(), targets.begin() + k * state_size);
        }
        if (cfg.input_noise > 0.0) {
          for (std::size_t i = 0; i < inputs.size(); ++i) {
            inputs[i] += cfg.input_noise * state.normalizer.field.std[i % ds.channels] * noise(noise_rng);
          }
        }
        state.normalizer.normalize_target(targets);
        auto it = graphs.find(b);
        if (it == graphs.end()) it = graphs.emplace(b, model::BatchedGraph(topo, b)).first;

        const auto feats = model::batch_features(inputs, b, topo, fcfg, state.normalizer);
        const auto target = ad::Tensor::from_values({state_size / ds.channels * b, std::size_t(ds.channels)}, targets);
        for (auto& t : params) t.zero_grad();
        ad::Tape tape;
        double loss_value;
        {
          ad::Tape::Recording rec(tape);
          const auto pred = model::forward_normalized(state.params, feats.nodes, feats.edges, it->second.index());
          const auto loss = ad::mse_loss(pred, target);
          loss_value = loss.item();
          tape.backward(loss);
        }
        if (!std::isfinite(loss_value)) throw NumericalError("non-finite loss");
        lr = cosine_lr(cfg, state.adam.step, total_steps);
        state.adam.hyper.lr = lr;
        ad::adam_step(params, state.adam);
        loss_sum += loss_value;
        ++steps;
      }
    } catch (const DivergenceError&) {
      throw;
    } catch (const NumericalError& e) {
      throw DivergenceError(std::string("training diverged: ") + e.what(), epoch);
    }
    state.epoch = epoch;
    const double wall = wall_offset + std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    state.history.push_back({epoch, loss_sum / static_cast<double>(steps), lr, wall});
    if (hooks.on_epoch) hooks.on_epoch(state.history.back());
    const bool last = epoch == cfg.epochs;
    if (hooks.on_checkpoint && (last || (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0))) {
      hooks.on_checkpoint(state);
    }
  }
  return state;
}

}  // namespace gns::training
