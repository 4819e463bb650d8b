#pragma once

// The five pipeline stages behind the `gns` binary. Each writes its outputs
// atomically and refuses to replace existing files unless overwrite is set.

#include <filesystem>
#include <iosfwd>

#include "gns/config.hpp"

namespace gns::cli {

namespace fs = std::filesystem;

struct Options {
  bool overwrite = false;
  std::ostream* log = nullptr;  // progress messages; null for silence
};

/// Dataset container plus "<out>.config.json".
void generate(const config::RunConfig& cfg, const fs::path& out, const Options& opt);

/// Selection manifest (JSON) over the pool ids of the dataset.
void select(const config::RunConfig& cfg, const fs::path& dataset, const fs::path& out, const Options& opt);

/// checkpoint.gnsc, loss.csv and config.json in run_dir. With resume, continues
/// from the checkpoint already there.
void train(const config::RunConfig& cfg, const fs::path& dataset, const fs::path& selection, const fs::path& run_dir,
           bool resume, const Options& opt);

/// per_trajectory.csv, curve.csv, summary.csv, snapshots.csv and config.json in report_dir.
void evaluate(const config::RunConfig& cfg, const fs::path& dataset, const fs::path& checkpoint,
              const fs::path& report_dir, const Options& opt);

/// SVG figures from the CSVs in report_dir (and an optional loss CSV).
void report(const fs::path& report_dir, const fs::path& loss_csv, const Options& opt);

/// Selected ids stored in a manifest.
std::vector<int> read_selection(const fs::path& manifest);

/// Full command-line entry point; returns the process exit code.
int run(int argc, char** argv);

}  // namespace gns::cli
