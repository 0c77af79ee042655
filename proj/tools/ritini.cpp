#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "ritini/baselines.hpp"
#include "ritini/bench.hpp"
#include "ritini/dataset.hpp"
#include "ritini/graph_json.hpp"
#include "ritini/model.hpp"

namespace fs = std::filesystem;
using namespace ritini;

namespace {

std::vector<data::PerturbationRecord> read_perturbations(const fs::path& path) {
  const auto j = graph::read_json_file(path);
  if (!j.is_array()) throw ParseError(fmt::format("{}: expected a JSON array of perturbations", path.string()));
  std::vector<data::PerturbationRecord> out;
  for (const auto& r : j) {
    try {
      out.push_back(data::PerturbationRecord{r.at("vertex").get<int>(), r.at("time").get<double>(),
                                             r.at("epsilon").get<double>(), r.value("parameter", std::string())});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("{}: bad perturbation record: {}", path.string(), e.what()));
    }
  }
  return out;
}

// [five-node] / [wilson-cowan] / [iaf] / [dmf] tables, keys as in bench configs.
bench::SystemSpec read_simulator_config(const fs::path& path, const std::string& system) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParseError(fmt::format("{}:{}: {}", path.string(), e.line(), e.message()));
  }
  std::string entry = "kind=" + system;
  if (auto table = tree.get_child_optional(system))
    for (const auto& [k, v] : *table) entry += " " + k + "=" + v.data();
  return bench::parse_system_spec(system, entry);
}

ad::OptimizerConfig::Kind optimizer_kind(const std::string& name) {
  if (name == "momentum") return ad::OptimizerConfig::Kind::momentum;
  if (name == "adam") return ad::OptimizerConfig::Kind::adam;
  throw ConfigError(fmt::format("unknown optimizer '{}'", name));
}

}  // namespace

int main(int argc, char** argv) {
  bench::tune_allocator();
  CLI::App app{"Time-varying interaction graph inference from multivariate time series"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a dataset from a built-in system");
  std::string system = "five-node";
  std::optional<int> nodes, steps, n_perturb;
  std::optional<double> dt, noise, epsilon;
  std::uint64_t sim_seed = 0;
  std::string perturb_file, sim_config, sim_out;
  sim->add_option("--system", system, "five-node | wilson-cowan | iaf | dmf")->required();
  sim->add_option("--nodes", nodes, "Vertex count (network systems)");
  sim->add_option("--steps", steps, "Steps (five-node, wilson-cowan, dmf) or recorded samples (iaf)");
  sim->add_option("--dt", dt, "Integration step");
  sim->add_option("--noise", noise, "Noise level");
  sim->add_option("--seed", sim_seed, "Random seed");
  sim->add_option("--perturb", perturb_file, "JSON list of {vertex, time, epsilon[, parameter]}");
  sim->add_option("--perturbations", n_perturb, "Number of generated perturbations (when --perturb is absent)");
  sim->add_option("--epsilon", epsilon, "Size of generated perturbations");
  sim->add_option("--config", sim_config, "INI file with one table per system");
  sim->add_option("--out", sim_out, "Output dataset directory")->required();

  // infer
  auto* inf = app.add_subcommand("infer", "Train the attention graph ODE and extract graphs");
  std::string data_dir, prior_arg = "auto-gc", inf_out, optimizer = "momentum";
  model::TrainConfig tc;
  double threshold = 0.1, holdout = 0.0;
  bool no_perturb = false;
  inf->add_option("--data", data_dir, "Dataset directory")->required();
  inf->add_option("--prior", prior_arg, "Prior graph JSON file, auto-gc or dense");
  inf->add_option("--lags", tc.model.lags, "Lag count L");
  inf->add_option("--hidden", tc.model.hidden, "Hidden width d");
  inf->add_option("--lambda1", tc.lambda1, "Prior (Frobenius) weight");
  inf->add_option("--lambda2", tc.lambda2, "L1 weight");
  inf->add_option("--epochs", tc.epochs, "Training epochs");
  inf->add_option("--solver-steps", tc.solver_steps, "RK4 steps per observation interval");
  inf->add_option("--learning-rate", tc.optimizer.learning_rate, "Learning rate");
  inf->add_option("--optimizer", optimizer, "momentum | adam");
  inf->add_option("--perturbation-weight", tc.perturbation_weight, "Weight of the perturbed-series term");
  inf->add_flag("--no-perturbations", no_perturb, "Ignore perturbed series");
  inf->add_option("--threshold", threshold, "Attention threshold for graphs");
  inf->add_option("--holdout", holdout, "Fraction of interior timepoints held out");
  inf->add_option("--seed", tc.seed, "Random seed");
  inf->add_option("--out", inf_out, "Output directory")->required();

  // baseline
  auto* base = app.add_subcommand("baseline", "Run a classical inference method");
  baselines::BaselineConfig bc;
  std::string method = "gc", base_data, base_out, scores_out;
  base->add_option("--method", method, "gc | oce | pc | mte | mmi")->required();
  base->add_option("--data", base_data, "Dataset directory")->required();
  base->add_option("--alpha", bc.alpha, "Significance level");
  base->add_option("--lags", bc.lags, "Granger lag order");
  base->add_option("--dmax", bc.max_conditioning, "PC maximum conditioning set size");
  base->add_option("--n-perm", bc.n_perm, "Permutations per significance test");
  base->add_option("--seed", bc.seed, "Random seed");
  bool per_pair = false;
  base->add_flag("--no-bonferroni", per_pair, "Granger: test each pair at the nominal level");
  base->add_option("--out", base_out, "Output graph JSON")->required();
  base->add_option("--scores", scores_out, "Per-edge score CSV (default: <out stem>_scores.csv)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Compare a predicted graph with the truth");
  std::string pred_file, truth_arg, metric = "ged";
  ev->add_option("--pred", pred_file, "Predicted graph JSON")->required();
  ev->add_option("--truth", truth_arg, "Truth graph JSON or dataset directory")->required();
  ev->add_option("--metric", metric, "ged | precision | recall");

  // bench
  auto* be = app.add_subcommand("bench", "Run the benchmark described by a config file");
  std::string bench_config, bench_out;
  bool ablation = false, large = false;
  std::optional<int> workers;
  be->add_option("--config", bench_config, "INI config with [systems], [methods], [report]")->required();
  be->add_option("--out", bench_out, "Output directory")->required();
  be->add_flag("--ablation", ablation, "Also train without perturbed series");
  be->add_flag("--large", large, "Add the 75-neuron spiking system");
  be->add_option("--workers", workers, "Worker threads");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      bench::SystemSpec spec = sim_config.empty() ? bench::parse_system_spec(system, "kind=" + system)
                                                  : read_simulator_config(sim_config, system);
      if (nodes) spec.nodes = *nodes;
      if (steps) spec.steps = *steps;
      if (dt) spec.dt = *dt;
      if (noise) spec.noise = *noise;
      if (n_perturb) spec.perturbations = *n_perturb;
      if (epsilon) spec.epsilon = *epsilon;
      if (!perturb_file.empty()) spec.records = read_perturbations(perturb_file);
      data::Dataset ds = bench::make_system(spec, sim_seed);
      data::save_dataset(ds, sim_out);
      std::cout << fmt::format("wrote {} series of {} vertices x {} samples to {}\n", ds.series.size(), ds.vertex_count(),
                               ds.series.front().length(), sim_out);
    } else if (*inf) {
      data::Dataset ds = data::load_dataset(data_dir);
      tc.optimizer.kind = optimizer_kind(optimizer);
      tc.use_perturbations = !no_perturb;
      graph::PriorGraph prior;
      if (prior_arg == "auto-gc" || prior_arg == "dense") {
        baselines::BaselineConfig gc;
        prior = bench::build_prior(ds, prior_arg, gc);
      } else {
        prior = graph::PriorGraph(graph::read_graph(prior_arg));
      }
      const auto& ref = ds.series[ds.unperturbed_indices().front()];
      std::vector<std::size_t> train_idx, held;
      if (holdout > 0.0) {
        auto split = data::split_holdout(ref, holdout, tc.seed);
        train_idx = split.train;
        held = split.held_out;
      }
      model::TrainedModel m = model::train(ds, prior, tc, train_idx);
      auto graphs = model::extract_graphs(m, threshold);
      fs::create_directories(inf_out);
      const fs::path out(inf_out);
      graph::write_graph(out / "static_graph.json", graphs.static_graph);
      graph::write_dynamic_graph(out / "dynamic_graph.json", graphs.dynamic);
      Eigen::MatrixXd pred = model::predict(m, ds, ref.times(), ds.unperturbed_indices().front());
      data::write_series_csv(out / "trajectories.csv", data::MultivariateTimeSeries(ref.times(), pred, ref.vertex_names()));
      model::save_model(out / "model.json", m);
      {
        // One column per supported pair "target<-source", one row per snapshot.
        const auto support = m.support();
        std::ofstream csv(out / "attention.csv");
        csv << "time";
        for (int i = 0; i < support.rows(); ++i)
          for (int j = 0; j < support.cols(); ++j)
            if (support(i, j)) csv << fmt::format(",{}<-{}", i, j);
        csv << "\n";
        for (std::size_t k = 0; k < m.attention.size(); ++k) {
          csv << data::format_double(m.attention.times[k]);
          for (int i = 0; i < support.rows(); ++i)
            for (int j = 0; j < support.cols(); ++j)
              if (support(i, j)) csv << "," << data::format_double(m.attention.snapshots[k](i, j));
          csv << "\n";
        }
      }
      nlohmann::json report = {{"loss_history", m.loss_history},
                               {"final_loss", m.loss_history.empty() ? 0.0 : m.loss_history.back()},
                               {"hysteresis_index", model::hysteresis_index(m)},
                               {"temporal_attention", m.params.temporal_attention()},
                               {"held_out_indices", held}};
      if (!held.empty()) {
        double se = 0.0;
        for (std::size_t k : held)
          se += (pred.row(static_cast<Eigen::Index>(k)) - ref.values().row(static_cast<Eigen::Index>(k))).squaredNorm();
        report["heldout_mse"] = se / static_cast<double>(held.size() * static_cast<std::size_t>(ref.vertex_count()));
      }
      if (ds.ground_truth) report["ged"] = graph::graph_edit_distance(graphs.static_graph, *ds.ground_truth);
      graph::write_json_file(out / "report.json", report);
      std::cout << fmt::format("trained {} epochs, final loss {:.6g}; static graph has {} edges\n", tc.epochs,
                               report["final_loss"].get<double>(), graphs.static_graph.edge_count());
    } else if (*base) {
      data::Dataset ds = data::load_dataset(base_data);
      bc.method = baselines::parse_method(method);
      bc.bonferroni = !per_pair;
      auto result = baselines::run_baseline(ds, bc);
      for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
      fs::path out(base_out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      graph::write_graph(out, result.graph);
      fs::path scores = scores_out.empty() ? out.parent_path() / (out.stem().string() + "_scores.csv") : fs::path(scores_out);
      baselines::write_scores_csv(scores, result);
      std::cout << fmt::format("{}: {} edges\n", method, result.graph.edge_count());
    } else if (*ev) {
      auto e = bench::evaluate(fs::path(pred_file), fs::path(truth_arg), bench::parse_metric(metric));
      if (e.warning) std::cerr << "warning: " << *e.warning << "\n";
      std::cout << data::format_double(e.value) << "\n";
    } else if (*be) {
      bench::BenchmarkConfig config = bench::load_config(bench_config);
      config.out = bench_out;
      config.ablation = ablation;
      config.large = large;
      if (workers) config.workers = *workers;
      auto report = bench::run_benchmark(config);
      std::cout << report.csv();
      for (const auto& c : report.cells)
        if (!c.ok) std::cerr << fmt::format("failed: {} / {} / seed {}: {}\n", c.system, c.method, c.seed, c.error);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
