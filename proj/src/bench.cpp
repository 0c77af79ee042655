#include "ritini/bench.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include "ritini/graph_json.hpp"
#include "ritini/simulators.hpp"

namespace ritini::bench {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("'{}' expects a number, got '{}'", key, v));
  }
}

int to_int(const std::string& key, const std::string& v) {
  double d = to_double(key, v);
  if (d != std::floor(d)) throw ConfigError(fmt::format("'{}' expects an integer, got '{}'", key, v));
  return static_cast<int>(d);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(fmt::format("'{}' expects true or false, got '{}'", key, v));
}

// A system entry: "kind=iaf nodes=20 steps=200".
}  // namespace

SystemSpec parse_system_spec(const std::string& name, const std::string& value) {
  SystemSpec s;
  s.name = name;
  bool has_kind = false;
  for (const auto& token : split(value, ' ')) {
    auto eq = token.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("system '{}': expected key=value, got '{}'", name, token));
    std::string k = token.substr(0, eq);
    std::string v = token.substr(eq + 1);
    if (k == "kind") {
      s.kind = parse_system(v);
      has_kind = true;
    } else if (k == "nodes") s.nodes = to_int(k, v);
    else if (k == "steps") s.steps = to_int(k, v);
    else if (k == "dt") s.dt = to_double(k, v);
    else if (k == "noise") s.noise = to_double(k, v);
    else if (k == "edge_probability") s.edge_probability = to_double(k, v);
    else if (k == "fraction_excitatory") s.fraction_excitatory = to_double(k, v);
    else if (k == "perturbations") s.perturbations = to_int(k, v);
    else if (k == "epsilon") s.epsilon = to_double(k, v);
    else if (k == "drive") s.drive = to_double(k, v);
    else throw ConfigError(fmt::format("system '{}': unknown key '{}'", name, k));
  }
  if (!has_kind) s.kind = parse_system(name);
  return s;
}

namespace {

std::string cell_text(const Aggregate& a) {
  if (!a.mean) return "FAILED";
  std::string text = a.sd ? fmt::format("{:.2f} ± {:.2f}", *a.mean, *a.sd) : fmt::format("{:.2f}", *a.mean);
  if (a.failed > 0) text += fmt::format(" ({} failed)", a.failed);
  return text;
}

nlohmann::json spec_json(const SystemSpec& s) {
  return {{"name", s.name},
          {"kind", system_name(s.kind)},
          {"nodes", s.nodes},
          {"steps", s.steps},
          {"dt", s.dt},
          {"noise", s.noise},
          {"edge_probability", s.edge_probability},
          {"fraction_excitatory", s.fraction_excitatory},
          {"perturbations", s.perturbations},
          {"epsilon", s.epsilon},
          {"drive", s.drive}};
}

}  // namespace

SystemKind parse_system(const std::string& name) {
  if (name == "five-node" || name == "five_node") return SystemKind::five_node;
  if (name == "wilson-cowan" || name == "wilson_cowan") return SystemKind::wilson_cowan;
  if (name == "iaf") return SystemKind::iaf;
  if (name == "dmf") return SystemKind::dmf;
  throw ConfigError(fmt::format("unknown system '{}'", name));
}

std::string system_name(SystemKind kind) {
  switch (kind) {
    case SystemKind::five_node: return "five-node";
    case SystemKind::wilson_cowan: return "wilson-cowan";
    case SystemKind::iaf: return "iaf";
    case SystemKind::dmf: return "dmf";
  }
  return "?";
}

std::vector<data::PerturbationRecord> default_perturbations(const SystemSpec& spec, int vertices, double dt,
                                                             std::size_t length, std::uint64_t seed) {
  if (!spec.records.empty()) return spec.records;
  std::vector<data::PerturbationRecord> out;
  if (spec.perturbations <= 0) return out;
  double eps = spec.epsilon;
  if (!(eps > 0.0)) {
    switch (spec.kind) {
      case SystemKind::five_node: eps = 0.5; break;
      case SystemKind::wilson_cowan: eps = 0.2; break;
      case SystemKind::iaf: eps = 10.0; break;
      case SystemKind::dmf: eps = 0.1; break;
    }
  }
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<int> pick(0, vertices - 1);
  for (int k = 0; k < spec.perturbations; ++k) {
    auto row = static_cast<std::size_t>(std::llround(static_cast<double>(length) * (k + 1) / (spec.perturbations + 1)));
    row = std::clamp<std::size_t>(row, 1, length - 1);
    out.push_back(data::PerturbationRecord{pick(rng), static_cast<double>(row) * dt, eps, ""});
  }
  return out;
}

data::Dataset make_system(const SystemSpec& spec, std::uint64_t seed) {
  switch (spec.kind) {
    case SystemKind::five_node: {
      sim::FiveNodeConfig c;
      if (spec.steps > 0) c.steps = spec.steps;
      if (spec.noise >= 0.0) c.noise_sigma = spec.noise;
      c.seed = seed;
      c.perturbations = default_perturbations(spec, 5, 1.0, static_cast<std::size_t>(c.steps), seed);
      return sim::simulate_five_node(c);
    }
    case SystemKind::wilson_cowan: {
      sim::WilsonCowanConfig c;
      const int n = spec.nodes > 0 ? spec.nodes : 10;
      c.network = sim::random_network(n, spec.edge_probability, spec.fraction_excitatory, seed);
      if (spec.steps > 0) c.steps = spec.steps;
      if (spec.dt > 0.0) c.dt = spec.dt;
      c.noise_sigma = spec.noise >= 0.0 ? spec.noise : 0.05;
      c.seed = seed;
      c.perturbations = default_perturbations(spec, n, c.dt * c.sample_every,
                                              static_cast<std::size_t>(c.steps / c.sample_every + 1), seed);
      return sim::simulate_wilson_cowan(c);
    }
    case SystemKind::iaf: {
      sim::IafConfig c;
      const int n = spec.nodes > 0 ? spec.nodes : 20;
      c.network = sim::random_network(n, spec.edge_probability, spec.fraction_excitatory, seed);
      c.neuron.I_e = spec.drive;
      if (spec.dt > 0.0) c.dt = spec.dt;
      if (spec.steps > 0) c.duration = spec.steps * c.record_interval;
      c.noise_current = spec.noise >= 0.0 ? spec.noise : 5000.0;
      c.seed = seed;
      const auto samples = static_cast<std::size_t>(std::llround(c.duration / c.record_interval)) + 1;
      c.perturbations = default_perturbations(spec, n, c.record_interval, samples, seed);
      return sim::simulate_iaf_network(c);
    }
    case SystemKind::dmf: {
      sim::DmfConfig c;
      const int n = spec.nodes > 0 ? spec.nodes : 10;
      auto net = sim::random_network(n, spec.edge_probability, 1.0, seed);
      c.coupling = net.graph.incoming();
      if (spec.steps > 0) c.steps = spec.steps;
      if (spec.dt > 0.0) c.dt = spec.dt;
      if (spec.noise >= 0.0) c.sigma = spec.noise;
      c.seed = seed;
      c.perturbations = default_perturbations(spec, n, c.dt * c.sample_every,
                                              static_cast<std::size_t>(c.steps / c.sample_every + 1), seed);
      return sim::simulate_dmf(c);
    }
  }
  throw ConfigError("unknown system kind");
}

void BenchmarkConfig::validate() const {
  if (replicates < 1) throw ConfigError("replicate count must be >= 1");
  if (systems.empty()) throw ConfigError("no systems configured");
  if (methods.empty()) throw ConfigError("no methods configured");
  if (workers < 1) throw ConfigError("worker count must be >= 1");
  if (prior != "auto-gc" && prior != "dense") throw ConfigError(fmt::format("unknown prior mode '{}'", prior));
  if (!(threshold >= 0.0)) throw ConfigError("threshold must be >= 0");
  if (!(holdout >= 0.0 && holdout < 1.0)) throw ConfigError("holdout fraction must lie in [0, 1)");
  if (train.lambda1 < 0.0 || train.lambda2 < 0.0) throw ConfigError("lambda1 and lambda2 must be >= 0");
  if (train.solver_steps < 1) throw ConfigError("solver steps must be >= 1");
  for (const auto& m : methods)
    if (m != "ritini") baselines::parse_method(m);
  for (const auto& s : systems)
    if (s.nodes > 50 && !large)
      throw ConfigError(fmt::format("system '{}' has {} vertices; sizes above 50 need --large", s.name, s.nodes));
}

BenchmarkConfig load_config(const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParseError(fmt::format("{}:{}: {}", path.string(), e.line(), e.message()));
  }
  BenchmarkConfig c;
  c.systems.clear();
  if (auto sys = tree.get_child_optional("systems"))
    for (const auto& [name, node] : *sys) c.systems.push_back(parse_system_spec(name, node.data()));
  if (auto methods = tree.get_child_optional("methods")) {
    for (const auto& [key, node] : *methods) {
      const std::string v = trim(node.data());
      if (key == "list") c.methods = split(v, ',');
      else if (key == "prior") c.prior = v;
      else if (key == "lags") {
        c.train.model.lags = to_int(key, v);
        c.baseline.lags = to_int(key, v);
      } else if (key == "hidden") c.train.model.hidden = to_int(key, v);
      else if (key == "epochs") c.train.epochs = to_int(key, v);
      else if (key == "learning_rate") c.train.optimizer.learning_rate = to_double(key, v);
      else if (key == "optimizer") {
        if (v == "adam") c.train.optimizer.kind = ad::OptimizerConfig::Kind::adam;
        else if (v == "momentum") c.train.optimizer.kind = ad::OptimizerConfig::Kind::momentum;
        else throw ConfigError(fmt::format("unknown optimizer '{}'", v));
      } else if (key == "lambda1") c.train.lambda1 = to_double(key, v);
      else if (key == "lambda2") c.train.lambda2 = to_double(key, v);
      else if (key == "solver_steps") c.train.solver_steps = to_int(key, v);
      else if (key == "perturbation_weight") c.train.perturbation_weight = to_double(key, v);
      else if (key == "alpha") c.baseline.alpha = to_double(key, v);
      else if (key == "granger_lags") c.baseline.lags = to_int(key, v);
      else if (key == "dmax") c.baseline.max_conditioning = to_int(key, v);
      else if (key == "n_perm") c.baseline.n_perm = to_int(key, v);
      else if (key == "bonferroni") c.baseline.bonferroni = to_bool(key, v);
      else throw ConfigError(fmt::format("[methods]: unknown key '{}'", key));
    }
  }
  if (auto report = tree.get_child_optional("report")) {
    for (const auto& [key, node] : *report) {
      const std::string v = trim(node.data());
      if (key == "replicates") c.replicates = to_int(key, v);
      else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_int(key, v));
      else if (key == "threshold") c.threshold = to_double(key, v);
      else if (key == "holdout") c.holdout = to_double(key, v);
      else if (key == "workers") c.workers = to_int(key, v);
      else throw ConfigError(fmt::format("[report]: unknown key '{}'", key));
    }
  }
  c.validate();
  return c;
}

graph::PriorGraph build_prior(const data::Dataset& dataset, const std::string& mode, const baselines::BaselineConfig& gc,
                              std::vector<std::string>* warnings) {
  if (dataset.prior) return *dataset.prior;
  const int n = dataset.vertex_count();
  if (mode == "dense") return graph::PriorGraph::dense(graph::WeightedDigraph(n));
  if (mode != "auto-gc") throw ConfigError(fmt::format("unknown prior mode '{}'", mode));
  baselines::GrangerConfig g{gc.lags, gc.alpha, gc.bonferroni};
  try {
    return graph::PriorGraph(baselines::granger_graph(baselines::unperturbed_series(dataset), g).graph);
  } catch (const CollinearityError& e) {
    // Constant or collinear series (a silent neuron): no usable Granger graph.
    if (warnings) warnings->push_back(fmt::format("{}; using a dense prior", e.what()));
    return graph::PriorGraph::dense(graph::WeightedDigraph(n));
  }
}

std::vector<Aggregate> InferenceReport::aggregate() const {
  std::vector<Aggregate> out;
  for (const auto& s : systems)
    for (const auto& m : methods) out.push_back(aggregate(s, m));
  return out;
}

Aggregate InferenceReport::aggregate(const std::string& system, const std::string& method) const {
  Aggregate a{system, method, 0, 0, std::nullopt, std::nullopt};
  std::vector<double> v;
  for (const auto& c : cells) {
    if (c.system != system || c.method != method) continue;
    ++a.runs;
    if (c.ok) v.push_back(c.ged);
    else ++a.failed;
  }
  if (!v.empty()) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    a.mean = mean;
    if (v.size() >= 2) {
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      a.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
  }
  return a;
}

std::string InferenceReport::csv() const {
  std::string out = "system";
  for (const auto& m : methods) out += "," + m;
  out += "\n";
  for (const auto& s : systems) {
    out += s;
    for (const auto& m : methods) out += "," + cell_text(aggregate(s, m));
    out += "\n";
  }
  return out;
}

nlohmann::json InferenceReport::to_json() const {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& c : cells) {
    nlohmann::json r = {{"system", c.system}, {"method", c.method}, {"seed", c.seed}, {"ok", c.ok},
                        {"wall_seconds", c.wall_seconds}};
    if (c.ok) {
      r["ged"] = c.ged;
      r["precision"] = c.precision;
      r["recall"] = c.recall;
      if (c.heldout_mse) r["heldout_mse"] = *c.heldout_mse;
    } else {
      r["error"] = c.error;
    }
    if (!c.warnings.empty()) r["warnings"] = c.warnings;
    runs.push_back(r);
  }
  nlohmann::json agg = nlohmann::json::array();
  for (const auto& a : aggregate()) {
    nlohmann::json j = {{"system", a.system}, {"method", a.method}, {"runs", a.runs}, {"failed", a.failed}};
    j["mean_ged"] = a.mean ? nlohmann::json(*a.mean) : nlohmann::json(nullptr);
    j["sd_ged"] = a.sd ? nlohmann::json(*a.sd) : nlohmann::json(nullptr);
    agg.push_back(j);
  }
  return {{"settings", settings}, {"runs", runs}, {"aggregate", agg}};
}

namespace {

struct Job {
  std::size_t system = 0;
  std::uint64_t seed = 0;
  std::string method;
  bool perturbations = true;
  std::string column;
};

std::string safe(const std::string& s) {
  std::string out = s;
  for (char& ch : out)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_')) ch = '_';
  return out;
}

void score(CellResult& cell, const graph::WeightedDigraph& pred, const graph::WeightedDigraph& truth) {
  cell.ged = static_cast<double>(graph::graph_edit_distance(pred, truth));
  auto p = evaluate(pred, truth, Metric::precision);
  if (p.warning) cell.warnings.push_back(*p.warning);
  cell.precision = p.value;
  cell.recall = evaluate(pred, truth, Metric::recall).value;
}

void run_ritini(CellResult& cell, const data::Dataset& ds, const BenchmarkConfig& config, const Job& job,
                const std::filesystem::path& dir) {
  graph::PriorGraph prior = build_prior(ds, config.prior, config.baseline, &cell.warnings);
  model::TrainConfig tc = config.train;
  tc.seed = job.seed;
  tc.use_perturbations = job.perturbations;
  const auto& ref = ds.series[ds.unperturbed_indices().front()];
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> held;
  if (config.holdout > 0.0) {
    auto split = data::split_holdout(ref, config.holdout, job.seed);
    train_idx = split.train;
    held = split.held_out;
  }
  model::TrainedModel m = model::train(ds, prior, tc, train_idx);
  auto graphs = model::extract_graphs(m, config.threshold);
  score(cell, graphs.static_graph, *ds.ground_truth);
  if (!held.empty()) {
    std::vector<double> times;
    for (std::size_t k : held) times.push_back(ref.times()[k]);
    Eigen::MatrixXd pred = model::predict(m, ds, times, ds.unperturbed_indices().front());
    double se = 0.0;
    for (std::size_t k = 0; k < held.size(); ++k)
      se += (pred.row(static_cast<Eigen::Index>(k)) - ref.values().row(static_cast<Eigen::Index>(held[k]))).squaredNorm();
    cell.heldout_mse = se / static_cast<double>(held.size() * static_cast<std::size_t>(ref.vertex_count()));
  }
  if (!dir.empty()) {
    std::filesystem::create_directories(dir);
    graph::write_graph(dir / "static_graph.json", graphs.static_graph);
    graph::write_dynamic_graph(dir / "dynamic_graph.json", graphs.dynamic);
    graph::write_graph(dir / "prior.json", prior.digraph());
    Eigen::MatrixXd all = model::predict(m, ds, ref.times(), ds.unperturbed_indices().front());
    data::write_series_csv(dir / "trajectories.csv", data::MultivariateTimeSeries(ref.times(), all, ref.vertex_names()));
  }
}

void run_baseline_cell(CellResult& cell, const data::Dataset& ds, const BenchmarkConfig& config, const Job& job,
                       const std::filesystem::path& dir) {
  baselines::BaselineConfig bc = config.baseline;
  bc.method = baselines::parse_method(job.method);
  bc.seed = job.seed;
  auto result = baselines::run_baseline(ds, bc);
  cell.warnings = result.warnings;
  score(cell, result.graph, *ds.ground_truth);
  if (!dir.empty()) {
    std::filesystem::create_directories(dir);
    graph::write_graph(dir / "graph.json", result.graph);
    baselines::write_scores_csv(dir / "scores.csv", result);
  }
}

}  // namespace

InferenceReport run_benchmark(const BenchmarkConfig& input) {
  BenchmarkConfig config = input;
  if (config.large) {
    SystemSpec big;
    big.name = "iaf-75";
    big.kind = SystemKind::iaf;
    big.nodes = 75;
    config.systems.push_back(big);
  }
  config.validate();

  InferenceReport report;
  for (const auto& s : config.systems) report.systems.push_back(s.name);
  report.methods = config.methods;
  const bool has_ritini = std::find(config.methods.begin(), config.methods.end(), "ritini") != config.methods.end();
  if (config.ablation && has_ritini) {
    auto it = std::find(report.methods.begin(), report.methods.end(), "ritini");
    report.methods.insert(it + 1, "ritini-no-perturbation");
  }

  // Datasets first (cheap, deterministic), then the cells.
  std::map<std::pair<std::size_t, std::uint64_t>, data::Dataset> datasets;
  std::map<std::pair<std::size_t, std::uint64_t>, std::string> dataset_errors;
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < config.systems.size(); ++s) {
    for (int r = 0; r < config.replicates; ++r) {
      const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(r);
      try {
        datasets[{s, seed}] = make_system(config.systems[s], seed);
        if (!config.out.empty())
          data::save_dataset(datasets[{s, seed}],
                             config.out / safe(config.systems[s].name) / fmt::format("seed_{}", seed) / "dataset");
      } catch (const std::exception& e) {
        dataset_errors[{s, seed}] = e.what();
      }
      for (const auto& m : report.methods) {
        Job j{s, seed, m, true, m};
        if (m == "ritini-no-perturbation") {
          j.method = "ritini";
          j.perturbations = false;
        }
        jobs.push_back(j);
      }
    }
  }

  std::vector<CellResult> cells(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      const Job& job = jobs[k];
      CellResult& cell = cells[k];
      cell.system = config.systems[job.system].name;
      cell.method = job.column;
      cell.seed = job.seed;
      auto start = std::chrono::steady_clock::now();
      try {
        auto err = dataset_errors.find({job.system, job.seed});
        if (err != dataset_errors.end()) throw Error("simulation failed: " + err->second);
        const data::Dataset& ds = datasets.at({job.system, job.seed});
        std::filesystem::path dir;
        if (!config.out.empty())
          dir = config.out / safe(cell.system) / fmt::format("seed_{}", job.seed) / safe(job.column);
        if (job.method == "ritini") run_ritini(cell, ds, config, job, dir);
        else run_baseline_cell(cell, ds, config, job, dir);
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
      }
      cell.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  };
  std::vector<std::thread> pool;
  const int threads = std::min<int>(config.workers, static_cast<int>(jobs.size()));
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  report.cells = std::move(cells);

  nlohmann::json systems = nlohmann::json::array();
  for (const auto& s : config.systems) systems.push_back(spec_json(s));
  report.settings = {{"systems", systems},
                     {"methods", report.methods},
                     {"replicates", config.replicates},
                     {"seed", config.seed},
                     {"prior", config.prior},
                     {"threshold", config.threshold},
                     {"holdout", config.holdout},
                     {"ablation", config.ablation},
                     {"train",
                      {{"lags", config.train.model.lags},
                       {"hidden", config.train.model.hidden},
                       {"epochs", config.train.epochs},
                       {"learning_rate", config.train.optimizer.learning_rate},
                       {"optimizer", config.train.optimizer.kind == ad::OptimizerConfig::Kind::adam ? "adam" : "momentum"},
                       {"lambda1", config.train.lambda1},
                       {"lambda2", config.train.lambda2},
                       {"solver_steps", config.train.solver_steps},
                       {"perturbation_weight", config.train.perturbation_weight}}},
                     {"baseline",
                      {{"alpha", config.baseline.alpha},
                       {"lags", config.baseline.lags},
                       {"dmax", config.baseline.max_conditioning},
                       {"n_perm", config.baseline.n_perm},
                       {"bonferroni", config.baseline.bonferroni}}}};
  if (!config.out.empty()) write_report(report, config.out);
  return report;
}

void write_report(const InferenceReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "report.csv", std::ios::binary);
  if (!csv) throw ConfigError(fmt::format("cannot write {}", (dir / "report.csv").string()));
  csv << report.csv();
  graph::write_json_file(dir / "report.json", report.to_json());
}

Metric parse_metric(const std::string& name) {
  if (name == "ged") return Metric::ged;
  if (name == "precision") return Metric::precision;
  if (name == "recall") return Metric::recall;
  throw ConfigError(fmt::format("unknown metric '{}'", name));
}

Evaluation evaluate(const graph::WeightedDigraph& pred, const graph::WeightedDigraph& truth, Metric metric) {
  if (pred.n() != truth.n())
    throw SizeMismatchError(fmt::format("predicted graph has {} vertices, truth has {}", pred.n(), truth.n()));
  Evaluation e;
  if (metric == Metric::ged) {
    e.value = static_cast<double>(graph::graph_edit_distance(pred, truth));
    return e;
  }
  auto o = graph::edge_overlap(pred, truth);
  if (metric == Metric::precision) {
    if (o.predicted == 0) {
      e.warning = "predicted graph has no edges; precision defined as 0";
      return e;
    }
    e.value = static_cast<double>(o.common) / static_cast<double>(o.predicted);
    return e;
  }
  if (o.truth == 0) {
    e.warning = "true graph has no edges; recall defined as 0";
    return e;
  }
  e.value = static_cast<double>(o.common) / static_cast<double>(o.truth);
  return e;
}

Evaluation evaluate(const std::filesystem::path& pred, const std::filesystem::path& truth, Metric metric) {
  if (!std::filesystem::is_directory(truth)) return evaluate(graph::read_graph(pred), graph::read_graph(truth), metric);
  auto ds = data::load_dataset(truth);
  if (!ds.ground_truth) throw ValidationError(truth.string() + " has no ground truth");
  return evaluate(graph::read_graph(pred), *ds.ground_truth, metric);
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace ritini::bench
