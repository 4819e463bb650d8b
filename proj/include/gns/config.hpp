#pragma once

// Run configuration: a JSON document whose defaults come from the chosen case.
// Unknown keys are rejected; "a.b=value" overrides are applied on top.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gns/datagen.hpp"
#include "gns/model.hpp"
#include "gns/selection.hpp"
#include "gns/training.hpp"

namespace gns::config {

struct SplitConfig {
  int n_pool = 1000;  // ids [0, n_pool) are candidates for training
  int n_test = 1000;  // ids [n_pool, n_pool + n_test) are held out
  std::uint64_t seed = 0;

  int total() const { return n_pool + n_test; }
};

struct EvalConfig {
  int max_test = 0;  // 0 evaluates every held-out trajectory
  int snapshot_index = 0;  // which evaluated trajectory gets field snapshots
  std::vector<double> snapshot_times{0.0, 0.25, 0.5, 1.0};
};

struct PathsConfig {
  std::string dataset = "dataset.gnsd";
  std::string selection = "selection.json";
  std::string run_dir = "run";
  std::string report_dir = "report";
};

struct RunConfig {
  datagen::CaseSpec data;
  SplitConfig split;
  selection::SelectionConfig selection;
  model::GnsConfig model;
  training::TrainConfig train;
  EvalConfig evaluate;
  PathsConfig paths;
  int threads = 0;  // 0: GNS_THREADS or all cores

  std::vector<int> pool_ids() const;
  std::vector<int> test_ids() const;
  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

RunConfig default_run_config(datagen::PdeCase pde);

/// Parses a JSON document (may be empty) plus "dotted.key=value" overrides.
/// Values parse as JSON, falling back to a plain string. Throws ConfigError.
RunConfig parse_run_config(std::string_view json_text, std::span<const std::string> overrides = {});

/// Fully resolved configuration as pretty-printed JSON.
std::string to_json(const RunConfig& cfg);

std::string_view channel_name(datagen::PdeCase pde, int c);

}  // namespace gns::config
