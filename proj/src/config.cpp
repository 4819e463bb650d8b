#include "gns/config.hpp"

#include <json.hpp>
#include <numeric>

#include "gns/errors.hpp"

namespace gns::config {

using nlohmann::json;

namespace {

std::string_view kernel_name(datagen::KernelKind k) {
  return k == datagen::KernelKind::matern ? "matern" : "squared_exponential";
}

datagen::KernelKind parse_kernel(const std::string& s) {
  if (s == "matern") return datagen::KernelKind::matern;
  if (s == "squared_exponential") return datagen::KernelKind::squared_exponential;
  throw ConfigError("unknown GRF kernel '" + s + "'");
}

json to_tree(const RunConfig& c) {
  const auto& d = c.data;
  json grf = {{"kernel", kernel_name(d.grf.kernel)},
              {"length_scale", d.grf.length_scale},
              {"sigma", d.grf.sigma},
              {"matern_nu", d.grf.matern_nu},
              {"normalize_to", nullptr}};
  if (d.grf.normalize_to) grf["normalize_to"] = {d.grf.normalize_to->first, d.grf.normalize_to->second};
  return {
      {"case", datagen::case_name(d.pde)},
      {"grid", {{"nx", d.grid.nx}, {"ny", d.grid.ny}}},
      {"grf", grf},
      {"pde", {{"viscosity", d.params.viscosity}, {"epsilon", d.params.epsilon}, {"gravity", d.params.gravity},
               {"swe_min_eta", d.swe_min_eta}}},
      {"solver", {{"nt", d.solver.nt},
                  {"dt", d.solver.dt_coarse},
                  {"cfl", d.solver.cfl},
                  {"substep_multiplier", d.solver.substep_multiplier},
                  {"ac_refinement", d.solver.ac_refinement},
                  {"blowup_threshold", d.solver.blowup_threshold}}},
      {"dataset", {{"n_pool", c.split.n_pool}, {"n_test", c.split.n_test}, {"seed", c.split.seed}}},
      {"selection", {{"n_components", c.selection.n_components},
                     {"n_select", c.selection.n_select},
                     {"max_iters", c.selection.max_iters},
                     {"seed", c.selection.seed},
                     {"flatten", selection::flatten_mode_name(c.selection.flatten)}}},
      {"model", {{"latent", c.model.latent}, {"hidden", c.model.hidden}, {"layers", c.model.layers}}},
      {"train", {{"epochs", c.train.epochs},
                 {"batch_size", c.train.batch_size},
                 {"lr", c.train.lr},
                 {"lr_final", c.train.lr_final},
                 {"seed", c.train.seed},
                 {"checkpoint_every", c.train.checkpoint_every},
                 {"pairs_per_trajectory", c.train.pairs_per_trajectory},
                 {"input_noise", c.train.input_noise}}},
      {"evaluate", {{"max_test", c.evaluate.max_test},
                    {"snapshot_index", c.evaluate.snapshot_index},
                    {"snapshot_times", c.evaluate.snapshot_times}}},
      {"paths", {{"dataset", c.paths.dataset},
                 {"selection", c.paths.selection},
                 {"run_dir", c.paths.run_dir},
                 {"report_dir", c.paths.report_dir}}},
      {"threads", c.threads},
  };
}

template <class T>
void get(const json& j, const char* key, T& out) {
  out = j.at(key).get<T>();
}

RunConfig from_tree(const json& t) {
  RunConfig c = default_run_config(datagen::parse_case(t.at("case").get<std::string>()));
  auto& d = c.data;
  get(t["grid"], "nx", d.grid.nx);
  get(t["grid"], "ny", d.grid.ny);
  const auto& g = t["grf"];
  d.grf.kernel = parse_kernel(g.at("kernel").get<std::string>());
  get(g, "length_scale", d.grf.length_scale);
  get(g, "sigma", d.grf.sigma);
  get(g, "matern_nu", d.grf.matern_nu);
  if (g.at("normalize_to").is_null()) {
    d.grf.normalize_to.reset();
  } else {
    const auto r = g.at("normalize_to").get<std::vector<double>>();
    if (r.size() != 2) throw ConfigError("grf.normalize_to must be null or [lo, hi]");
    d.grf.normalize_to = std::pair{r[0], r[1]};
  }
  const auto& p = t["pde"];
  get(p, "viscosity", d.params.viscosity);
  get(p, "epsilon", d.params.epsilon);
  get(p, "gravity", d.params.gravity);
  get(p, "swe_min_eta", d.swe_min_eta);
  const auto& s = t["solver"];
  get(s, "nt", d.solver.nt);
  get(s, "dt", d.solver.dt_coarse);
  get(s, "cfl", d.solver.cfl);
  get(s, "substep_multiplier", d.solver.substep_multiplier);
  get(s, "ac_refinement", d.solver.ac_refinement);
  get(s, "blowup_threshold", d.solver.blowup_threshold);
  get(t["dataset"], "n_pool", c.split.n_pool);
  get(t["dataset"], "n_test", c.split.n_test);
  get(t["dataset"], "seed", c.split.seed);
  const auto& sel = t["selection"];
  get(sel, "n_components", c.selection.n_components);
  get(sel, "n_select", c.selection.n_select);
  get(sel, "max_iters", c.selection.max_iters);
  get(sel, "seed", c.selection.seed);
  c.selection.flatten = selection::parse_flatten_mode(sel.at("flatten").get<std::string>());
  get(t["model"], "latent", c.model.latent);
  get(t["model"], "hidden", c.model.hidden);
  get(t["model"], "layers", c.model.layers);
  const auto& tr = t["train"];
  get(tr, "epochs", c.train.epochs);
  get(tr, "batch_size", c.train.batch_size);
  get(tr, "lr", c.train.lr);
  get(tr, "lr_final", c.train.lr_final);
  get(tr, "seed", c.train.seed);
  get(tr, "checkpoint_every", c.train.checkpoint_every);
  get(tr, "pairs_per_trajectory", c.train.pairs_per_trajectory);
  get(tr, "input_noise", c.train.input_noise);
  get(t["evaluate"], "max_test", c.evaluate.max_test);
  get(t["evaluate"], "snapshot_index", c.evaluate.snapshot_index);
  get(t["evaluate"], "snapshot_times", c.evaluate.snapshot_times);
  get(t["paths"], "dataset", c.paths.dataset);
  get(t["paths"], "selection", c.paths.selection);
  get(t["paths"], "run_dir", c.paths.run_dir);
  get(t["paths"], "report_dir", c.paths.report_dir);
  get(t, "threads", c.threads);
  return c;
}

/// Copies user values onto the defaults; every key must already exist.
void merge(json& base, const json& user, const std::string& where) {
  if (!user.is_object()) throw ConfigError("config" + (where.empty() ? "" : " section '" + where + "'") + " must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (base[key].is_object()) {
      merge(base[key], value, path);
    } else {
      base[key] = value;
    }
  }
}

json override_value(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(std::string(text));
  }
}

void apply_override(json& tree, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  const std::string key(assignment.substr(0, eq));
  json* node = &tree;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("override '" + key + "' names a section, not a value");
  *node = override_value(assignment.substr(eq + 1));
}

}  // namespace

std::vector<int> RunConfig::pool_ids() const {
  std::vector<int> ids(split.n_pool);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

std::vector<int> RunConfig::test_ids() const {
  const int n = evaluate.max_test > 0 ? std::min(evaluate.max_test, split.n_test) : split.n_test;
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), split.n_pool);
  return ids;
}

void RunConfig::validate() const {
  data.grid.validate();
  data.grf.validate();
  if (data.solver.nt < 2 || !(data.solver.dt_coarse > 0.0)) throw ConfigError("solver: need nt >= 2 and dt > 0");
  if (split.n_pool < 1 || split.n_test < 0) throw ConfigError("dataset: need n_pool >= 1 and n_test >= 0");
  selection.validate(split.n_pool);
  model::GnsConfig m = model;
  m.channels = datagen::channel_count(data.pde);
  m.validate();
  train.validate();
  if (evaluate.max_test < 0 || evaluate.snapshot_index < 0) throw ConfigError("evaluate: counts must be >= 0");
  for (double t : evaluate.snapshot_times) {
    if (t < 0.0) throw ConfigError("evaluate: snapshot times must be >= 0");
  }
  if (threads < 0) throw ConfigError("threads must be >= 0");
}

RunConfig default_run_config(datagen::PdeCase pde) {
  RunConfig c;
  c.data = datagen::default_case(pde);
  const bool big = pde == datagen::PdeCase::burgers_coupled || pde == datagen::PdeCase::swe;
  c.split.n_pool = big ? 500 : 1000;
  c.split.n_test = c.split.n_pool;
  c.selection.n_components = selection::default_components(pde);
  c.selection.n_select = 30;
  c.model.channels = datagen::channel_count(pde);
  c.train = training::default_train_config(pde);
  return c;
}

RunConfig parse_run_config(std::string_view json_text, std::span<const std::string> overrides) {
  try {
    json user = json::object();
    if (json_text.find_first_not_of(" \t\r\n") != std::string_view::npos) user = json::parse(json_text);
    if (!user.is_object()) throw ConfigError("config must be a JSON object");

    std::string case_name = user.contains("case") ? user["case"].get<std::string>() : "burgers_scalar";
    for (const auto& o : overrides) {
      if (o.rfind("case=", 0) == 0) case_name = o.substr(5);
    }
    json tree = to_tree(default_run_config(datagen::parse_case(case_name)));
    merge(tree, user, "");
    for (const auto& o : overrides) apply_override(tree, o);
    RunConfig c = from_tree(tree);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

std::string to_json(const RunConfig& cfg) { return to_tree(cfg).dump(2) + "\n"; }

std::string_view channel_name(datagen::PdeCase pde, int c) {
  static constexpr std::string_view uv[] = {"u", "v"};
  static constexpr std::string_view swe[] = {"u", "v", "eta"};
  switch (pde) {
    case datagen::PdeCase::burgers_coupled: return uv[c];
    case datagen::PdeCase::swe: return swe[c];
    default: return "u";
  }
}

}  // namespace gns::config
