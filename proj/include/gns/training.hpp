#pragma once

// One-step derivative supervision: pairs, normalization statistics, and the
// Adam training loop with cosine learning-rate decay.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "gns/datagen.hpp"
#include "gns/graph.hpp"
#include "gns/model.hpp"
#include "gns/tensor.hpp"

namespace gns::training {

struct OneStepPair {
  int trajectory = 0;  // dataset index
  int time = 0;        // input snapshot index t
  std::vector<double> input;   // u^t
  std::vector<double> target;  // (u^{t+1} - u^t) / dt
};

/// (Nt - 1) forward-difference pairs per selected trajectory, in id then time order.
/// Throws ConfigError on an empty selection, IndexError on unknown ids.
std::vector<OneStepPair> build_pairs(const datagen::Dataset& ds, std::span<const int> ids);

/// Statistics over the given pairs on the dataset grid.
model::Normalizer fit_normalizer(std::span<const OneStepPair> pairs, const graph::Topology& topo, int channels);

struct TrainConfig {
  int epochs = 600;
  int batch_size = 4;
  double lr = 1e-3;
  double lr_final = 1e-5;
  std::uint64_t seed = 0;
  int checkpoint_every = 50;
  /// Pairs drawn per trajectory each epoch, one from each of that many equal
  /// time bands; 0 uses every pair.
  int pairs_per_trajectory = 0;
  /// Standard deviation (in normalized units) of Gaussian input noise; 0 disables.
  double input_noise = 0.0;

  void validate() const;
};

/// Epochs and batch sizes used for each case when none are given.
TrainConfig default_train_config(datagen::PdeCase pde);

/// Cosine decay from lr to lr_final over total_steps.
double cosine_lr(const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct TrainState {
  model::GnsConfig model_cfg;
  model::GnsParams params;
  model::Normalizer normalizer;
  ad::AdamState adam;
  int epoch = 0;  // completed epochs
  std::uint64_t seed = 0;
  std::vector<EpochRecord> history;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  /// The state's parameters are the live tensors; clone them to keep a snapshot.
  std::function<void(const TrainState&)> on_checkpoint;
};

/// Trains from scratch, or continues a copy of `resume` (same data and config) to cfg.epochs.
/// A non-finite loss or gradient throws DivergenceError carrying the epoch.
TrainState train(const datagen::Dataset& ds, std::span<const int> ids, const TrainConfig& cfg,
                 const model::GnsConfig& model_cfg, std::optional<TrainState> resume = std::nullopt,
                 const TrainHooks& hooks = {});

}  // namespace gns::training
