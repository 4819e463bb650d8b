#include "gns/commands.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <iostream>
#include <json.hpp>
#include <map>
#include <numbers>

#include "gns/errors.hpp"
#include "gns/evaluation.hpp"
#include "gns/io.hpp"
#include "gns/parallel.hpp"
#include "gns/runtime.hpp"
#include "gns/svg.hpp"

namespace gns::cli {

using nlohmann::json;

namespace {

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

template <class... Args>
void say(const Options& opt, const Args&... parts) {
  if (!opt.log) return;
  ((*opt.log) << ... << parts) << '\n';
  opt.log->flush();
}

fs::path sibling(const fs::path& p, const std::string& suffix) {
  auto s = p;
  s += suffix;
  return s;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void check_case(const config::RunConfig& cfg, const datagen::Dataset& ds) {
  if (ds.pde != cfg.data.pde) {
    throw InputError("dataset holds case '" + std::string(datagen::case_name(ds.pde)) + "' but the config names '" +
                     std::string(datagen::case_name(cfg.data.pde)) + "'");
  }
}

std::string column(datagen::PdeCase pde, const std::string& prefix, int c) {
  return prefix + std::string(config::channel_name(pde, c));
}

std::vector<double> numbers(const io::CsvTable& t, std::size_t col) {
  std::vector<double> v;
  for (const auto& r : t.rows) v.push_back(std::stod(r[col]));
  return v;
}

}  // namespace

void generate(const config::RunConfig& cfg, const fs::path& out, const Options& opt) {
  cfg.validate();
  const auto snapshot = sibling(out, ".config.json");
  io::check_writable(out, opt.overwrite);
  io::check_writable(snapshot, opt.overwrite);
  Stopwatch sw;
  const auto ds = datagen::generate_dataset(cfg.data, cfg.split.total(), cfg.split.seed, resolve_threads(cfg.threads));
  io::save_dataset(out, ds, opt.overwrite);
  io::write_file_atomic(snapshot, config::to_json(cfg), opt.overwrite);
  say(opt, "generated ", ds.size(), " ", datagen::case_name(ds.pde), " trajectories (", ds.grid.nx, "x", ds.grid.ny,
      ", nt=", ds.nt, ") in ", sw.seconds(), " s -> ", out.string());
}

void select(const config::RunConfig& cfg, const fs::path& dataset, const fs::path& out, const Options& opt) {
  cfg.validate();
  io::check_writable(out, opt.overwrite);
  const auto bytes = io::read_file(dataset);
  auto ds = io::decode_dataset(bytes);
  check_case(cfg, ds);
  if (ds.size() < static_cast<std::size_t>(cfg.split.n_pool)) {
    throw InputError("dataset has " + std::to_string(ds.size()) + " trajectories, fewer than the pool of " +
                     std::to_string(cfg.split.n_pool));
  }
  ds.trajectories.resize(cfg.split.n_pool);
  Stopwatch sw;
  const auto sel = selection::select(ds, cfg.selection);
  json clusters = json::array();
  for (const auto& c : sel.clusters) clusters.push_back({{"cluster", c.cluster}, {"id", c.id}, {"distance", c.distance}});
  const json manifest = {
      {"case", datagen::case_name(ds.pde)},
      {"dataset_fingerprint", hex64(io::fnv1a64(bytes))},
      {"pool_size", cfg.split.n_pool},
      {"config", {{"n_components", cfg.selection.n_components},
                  {"n_select", cfg.selection.n_select},
                  {"max_iters", cfg.selection.max_iters},
                  {"seed", cfg.selection.seed},
                  {"flatten", selection::flatten_mode_name(cfg.selection.flatten)}}},
      {"components_used", sel.components},
      {"selected", sel.ids},
      {"clusters", clusters},
      {"warnings", sel.warnings},
  };
  for (const auto& w : sel.warnings) say(opt, "warning: ", w);
  io::write_file_atomic(out, manifest.dump(2) + "\n", opt.overwrite);
  say(opt, "selected ", sel.ids.size(), " of ", cfg.split.n_pool, " trajectories in ", sw.seconds(), " s -> ",
      out.string());
}

namespace {

json read_manifest(const fs::path& manifest) {
  try {
    return json::parse(io::read_file(manifest));
  } catch (const json::exception& e) {
    throw InputError("selection manifest " + manifest.string() + ": " + e.what());
  }
}

}  // namespace

std::vector<int> read_selection(const fs::path& manifest) {
  try {
    return read_manifest(manifest).at("selected").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw InputError("selection manifest " + manifest.string() + ": " + e.what());
  }
}

void train(const config::RunConfig& cfg, const fs::path& dataset, const fs::path& selection, const fs::path& run_dir,
           bool resume, const Options& opt) {
  cfg.validate();
  const auto ckpt_path = run_dir / "checkpoint.gnsc", loss_path = run_dir / "loss.csv",
             cfg_path = run_dir / "config.json";
  const bool replace = opt.overwrite || resume;
  for (const auto& p : {ckpt_path, loss_path, cfg_path}) io::check_writable(p, replace);

  const auto bytes = io::read_file(dataset);
  const auto ds = io::decode_dataset(bytes);
  check_case(cfg, ds);
  const auto manifest = read_manifest(selection);
  const auto ids = read_selection(selection);
  if (manifest.value("dataset_fingerprint", std::string()) != hex64(io::fnv1a64(bytes))) {
    throw InputError("selection manifest " + selection.string() + " was made from a different dataset");
  }

  std::optional<training::TrainState> previous;
  if (resume) {
    previous = io::load_checkpoint(ckpt_path);
    say(opt, "resuming from epoch ", previous->epoch);
  }
  model::GnsConfig mcfg = cfg.model;
  mcfg.channels = ds.channels;

  const int every = std::max(1, cfg.train.epochs / 20);
  training::TrainHooks hooks;
  hooks.on_epoch = [&](const training::EpochRecord& r) {
    if (r.epoch == 1 || r.epoch % every == 0 || r.epoch == cfg.train.epochs) {
      say(opt, "epoch ", r.epoch, "/", cfg.train.epochs, "  loss ", r.mean_loss, "  lr ", r.lr, "  ", r.wall_seconds, " s");
    }
  };
  hooks.on_checkpoint = [&](const training::TrainState& s) {
    io::save_checkpoint(ckpt_path, s, true);
    io::write_file_atomic(loss_path, io::loss_csv(s.history), true);
  };
  say(opt, "training on ", ids.size(), " trajectories for ", cfg.train.epochs, " epochs");
  io::write_file_atomic(cfg_path, config::to_json(cfg), true);
  const auto state = training::train(ds, ids, cfg.train, mcfg, std::move(previous), hooks);
  io::save_checkpoint(ckpt_path, state, true);
  io::write_file_atomic(loss_path, io::loss_csv(state.history), true);
  say(opt, "wrote ", ckpt_path.string());
}

void evaluate(const config::RunConfig& cfg, const fs::path& dataset, const fs::path& checkpoint,
              const fs::path& report_dir, const Options& opt) {
  cfg.validate();
  const std::vector<std::string> names{"per_trajectory.csv", "curve.csv", "summary.csv", "snapshots.csv", "config.json"};
  for (const auto& n : names) io::check_writable(report_dir / n, opt.overwrite);
  const auto ds = io::load_dataset(dataset);
  check_case(cfg, ds);
  const auto state = io::load_checkpoint(checkpoint);
  if (state.model_cfg.channels != ds.channels) throw InputError("checkpoint and dataset channel counts differ");
  const auto ids = cfg.test_ids();
  if (ids.empty()) throw ConfigError("evaluate: no held-out trajectories (dataset.n_test is 0)");
  if (static_cast<std::size_t>(ids.back()) >= ds.size()) {
    throw InputError("dataset has " + std::to_string(ds.size()) + " trajectories; held-out ids reach " +
                     std::to_string(ids.back()));
  }
  const model::Simulator sim(state.model_cfg, state.params, state.normalizer,
                             graph::build_topology(ds.grid.nx, ds.grid.ny));
  const auto f = evaluation::gns_derivative(sim);
  Stopwatch sw;
  const auto rep = evaluation::evaluate_suite(ds, ids, f, {.threads = cfg.threads});
  const int C = ds.channels;

  std::vector<std::string> head{"id", "diverged", "diverged_at"};
  for (int c = 0; c < C; ++c) head.push_back(column(ds.pde, "rel_l2_", c));
  io::CsvWriter per(head);
  for (const auto& t : rep.trajectories) {
    per.cell(t.id).cell(t.diverged ? 1 : 0).cell(t.diverged_at);
    for (int c = 0; c < C; ++c) per.cell(t.diverged ? std::nan("") : t.overall[c]);
    per.end_row();
  }

  head = {"step", "t"};
  for (int c = 0; c < C; ++c) head.push_back(column(ds.pde, "rel_l2_", c));
  io::CsvWriter curve(head);
  for (int s = 0; s < rep.nt; ++s) {
    curve.cell(s).cell(s * rep.dt);
    for (int c = 0; c < C; ++c) curve.cell(rep.mean_curve[s * C + c]);
    curve.end_row();
  }

  head = {"case", "epochs", "n_evaluated", "n_diverged"};
  for (int c = 0; c < C; ++c) head.push_back(column(ds.pde, "mean_rel_l2_", c));
  for (int c = 0; c < C; ++c) head.push_back(column(ds.pde, "stacked_rel_l2_", c));
  io::CsvWriter summary(head);
  summary.cell(datagen::case_name(ds.pde)).cell(state.epoch).cell(static_cast<int>(rep.trajectories.size()))
      .cell(rep.n_diverged);
  for (double v : rep.mean_overall) summary.cell(v);
  for (double v : rep.stacked_overall) summary.cell(v);
  summary.end_row();

  const int snap_id = ids[std::min<std::size_t>(cfg.evaluate.snapshot_index, ids.size() - 1)];
  const auto& truth = ds.trajectories[snap_id];
  const auto roll = evaluation::rollout(truth.snapshot(0), f, ds.dt_coarse, truth.nt - 1);
  io::CsvWriter snaps({"trajectory", "step", "t", "node", "ix", "iy", "channel", "truth", "pred"});
  for (double t : cfg.evaluate.snapshot_times) {
    const int s = std::min(static_cast<int>(std::lround(t / ds.dt_coarse)), roll.steps_done);
    const std::size_t n = truth.n_nodes;
    for (std::size_t node = 0; node < n; ++node) {
      for (int c = 0; c < C; ++c) {
        const std::size_t i = (s * n + node) * C + c;
        snaps.cell(snap_id).cell(s).cell(s * ds.dt_coarse).cell(static_cast<long long>(node))
            .cell(static_cast<int>(node % ds.grid.nx)).cell(static_cast<int>(node / ds.grid.nx))
            .cell(config::channel_name(ds.pde, c)).cell(truth.fields[i]).cell(roll.fields[i]);
        snaps.end_row();
      }
    }
  }

  io::write_file_atomic(report_dir / "per_trajectory.csv", per.str(), opt.overwrite);
  io::write_file_atomic(report_dir / "curve.csv", curve.str(), opt.overwrite);
  io::write_file_atomic(report_dir / "summary.csv", summary.str(), opt.overwrite);
  io::write_file_atomic(report_dir / "snapshots.csv", snaps.str(), opt.overwrite);
  io::write_file_atomic(report_dir / "config.json", config::to_json(cfg), opt.overwrite);
  for (int c = 0; c < C; ++c) {
    say(opt, config::channel_name(ds.pde, c), ": mean relative L2 ", rep.mean_overall[c], " (stacked ",
        rep.stacked_overall[c], ")");
  }
  say(opt, "evaluated ", rep.trajectories.size(), " trajectories (", rep.n_diverged, " diverged) in ", sw.seconds(),
      " s -> ", report_dir.string());
}

void report(const fs::path& report_dir, const fs::path& loss_csv, const Options& opt) {
  const auto curve_in = report_dir / "curve.csv";
  const auto curve = io::parse_csv(io::read_file(curve_in));
  std::vector<std::pair<fs::path, std::string>> outputs;

  std::vector<svg::Series> series;
  const auto t = numbers(curve, curve.column("t"));
  for (std::size_t c = 2; c < curve.header.size(); ++c) {
    const std::string& h = curve.header[c];
    series.push_back({h.substr(h.rfind('_') + 1), t, numbers(curve, c)});
  }
  outputs.push_back({report_dir / "error_curve.svg",
                     svg::line_chart(series, {"Error accumulation (mean over test trajectories)", "t", "relative L2"})});

  if (!loss_csv.empty()) {
    const auto loss = io::parse_csv(io::read_file(loss_csv));
    outputs.push_back({report_dir / "loss.svg",
                       svg::line_chart({{"train", numbers(loss, loss.column("epoch")), numbers(loss, loss.column("mean_loss"))}},
                                       {"Training loss", "epoch", "mean MSE (normalized)", true})});
  }

  const auto snap_in = report_dir / "snapshots.csv";
  if (fs::exists(snap_in)) {
    const auto snaps = io::parse_csv(io::read_file(snap_in));
    const auto c_step = snaps.column("step"), c_t = snaps.column("t"), c_ix = snaps.column("ix"),
               c_iy = snaps.column("iy"), c_ch = snaps.column("channel"), c_truth = snaps.column("truth"),
               c_pred = snaps.column("pred");
    int nx = 0, ny = 0;
    std::vector<std::string> steps, channels;
    std::map<std::string, std::string> step_time;
    for (const auto& r : snaps.rows) {
      nx = std::max(nx, std::stoi(r[c_ix]) + 1);
      ny = std::max(ny, std::stoi(r[c_iy]) + 1);
      if (std::find(steps.begin(), steps.end(), r[c_step]) == steps.end()) steps.push_back(r[c_step]);
      if (std::find(channels.begin(), channels.end(), r[c_ch]) == channels.end()) channels.push_back(r[c_ch]);
      step_time[r[c_step]] = r[c_t];
    }
    for (const auto& ch : channels) {
      std::vector<svg::Field> cells(3 * steps.size(), svg::Field{nx, ny, std::vector<double>(nx * ny, 0.0)});
      for (const auto& r : snaps.rows) {
        if (r[c_ch] != ch) continue;
        const std::size_t col = std::find(steps.begin(), steps.end(), r[c_step]) - steps.begin();
        const int node = std::stoi(r[c_iy]) * nx + std::stoi(r[c_ix]);
        const double a = std::stod(r[c_truth]), b = std::stod(r[c_pred]);
        cells[col].values[node] = a;
        cells[steps.size() + col].values[node] = b;
        cells[2 * steps.size() + col].values[node] = std::abs(b - a);
      }
      std::vector<std::string> cols;
      for (const auto& s : steps) cols.push_back("t = " + step_time[s]);
      outputs.push_back({report_dir / ("snapshots_" + ch + ".svg"),
                         svg::heat_map_grid("Field " + ch + ": ground truth, GNS rollout, absolute error",
                                            {"truth", "GNS", "|error|"}, cols, cells)});
    }
  }
  for (const auto& [p, _] : outputs) io::check_writable(p, opt.overwrite);
  for (const auto& [p, content] : outputs) {
    io::write_file_atomic(p, content, opt.overwrite);
    say(opt, "wrote ", p.string());
  }
}

int run(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Graph neural simulator lab: generate data, select, train, evaluate, report"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> sets;
  bool overwrite = false, quiet = false;
  int threads = 0;
  app.add_option("-c,--config", config_path, "JSON run configuration");
  app.add_option("-s,--set", sets, "Override a config value, e.g. train.epochs=150")->take_all();
  app.add_flag("--overwrite", overwrite, "Replace existing outputs");
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");
  app.add_option("-j,--threads", threads, "Worker threads (default: GNS_THREADS or all cores)");

  std::string dataset, out, selection_path, run_dir, checkpoint, report_dir, loss;
  bool resume = false;
  app.fallthrough();
  auto* gen = app.add_subcommand("generate", "Solve the PDE for the pool and test initial conditions");
  gen->add_option("-o,--out", out, "Dataset file (default: paths.dataset)");
  auto* sel = app.add_subcommand("select", "Pick training trajectories with PCA + k-means");
  sel->add_option("-d,--dataset", dataset, "Dataset file");
  sel->add_option("-o,--out", out, "Selection manifest (default: paths.selection)");
  auto* tr = app.add_subcommand("train", "Train the graph network on the selected trajectories");
  tr->add_option("-d,--dataset", dataset, "Dataset file");
  tr->add_option("--selection", selection_path, "Selection manifest");
  tr->add_option("-o,--run-dir", run_dir, "Output directory (default: paths.run_dir)");
  tr->add_flag("--resume", resume, "Continue from the checkpoint in the run directory");
  auto* ev = app.add_subcommand("evaluate", "Roll out the trained model on held-out trajectories");
  ev->add_option("-d,--dataset", dataset, "Dataset file");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint (default: <run_dir>/checkpoint.gnsc)");
  ev->add_option("-o,--out-dir", report_dir, "Report directory (default: paths.report_dir)");
  auto* rp = app.add_subcommand("report", "Render SVG figures from an evaluation report");
  rp->add_option("--dir", report_dir, "Report directory (default: paths.report_dir)");
  rp->add_option("--loss", loss, "Loss CSV to plot (default: <run_dir>/loss.csv when present)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::usage);
  }

  try {
    if (!config_path.empty() && !fs::exists(config_path)) throw ConfigError("config file " + config_path + " not found");
    const std::string text = config_path.empty() ? "" : io::read_file(config_path);
    auto cfg = config::parse_run_config(text, sets);
    if (threads > 0) cfg.threads = threads;
    const Options opt{overwrite, quiet ? nullptr : &std::cerr};
    auto or_default = [](const std::string& v, const std::string& d) { return fs::path(v.empty() ? d : v); };
    const fs::path ds_path = or_default(dataset, cfg.paths.dataset);
    const fs::path rd = or_default(run_dir, cfg.paths.run_dir);
    if (gen->parsed()) {
      generate(cfg, or_default(out, cfg.paths.dataset), opt);
    } else if (sel->parsed()) {
      select(cfg, ds_path, or_default(out, cfg.paths.selection), opt);
    } else if (tr->parsed()) {
      train(cfg, ds_path, or_default(selection_path, cfg.paths.selection), rd, resume, opt);
    } else if (ev->parsed()) {
      evaluate(cfg, ds_path, or_default(checkpoint, (rd / "checkpoint.gnsc").string()),
               or_default(report_dir, cfg.paths.report_dir), opt);
    } else if (rp->parsed()) {
      fs::path loss_path = loss;
      if (loss_path.empty() && fs::exists(rd / "loss.csv")) loss_path = rd / "loss.csv";
      report(or_default(report_dir, cfg.paths.report_dir), loss_path, opt);
    }
    return static_cast<int>(ExitCode::ok);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::validation);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace gns::cli
