#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ritini/baselines.hpp"
#include "ritini/dataset.hpp"
#include "ritini/graph.hpp"
#include "ritini/model.hpp"

// Benchmark harness: simulate systems, run RiTINI and the baselines over
// seeds, score every graph against the ground truth and tabulate.
namespace ritini::bench {

enum class SystemKind { five_node, wilson_cowan, iaf, dmf };
SystemKind parse_system(const std::string& name);
std::string system_name(SystemKind kind);

/// One simulated system. Zero or negative numeric fields take the
/// simulator's default.
struct SystemSpec {
  std::string name;
  SystemKind kind = SystemKind::five_node;
  int nodes = 0;
  int steps = 0;
  double dt = 0.0;
  double noise = -1.0;
  double edge_probability = 0.2;
  double fraction_excitatory = 0.8;
  /// Number of perturbed replicates; each injects at one vertex.
  int perturbations = 2;
  double epsilon = 0.0;
  /// IAF constant input current I_e (pA). With the membrane equation as
  /// written the threshold needs I_e >= 3750 pA; 3000 pA plus the default
  /// 5000 pA white noise gives irregular, input-sensitive firing.
  double drive = 3000.0;
  /// Explicit injections; when empty `perturbations` records are generated.
  std::vector<data::PerturbationRecord> records;
};

/// Parses "key=value key=value ..." (keys as the SystemSpec fields, plus kind).
SystemSpec parse_system_spec(const std::string& name, const std::string& entry);

/// Builds the dataset for `spec` and seed: the random network (if any) and
/// every simulator input come from the seed.
data::Dataset make_system(const SystemSpec& spec, std::uint64_t seed);
/// The perturbation records make_system injects.
std::vector<data::PerturbationRecord> default_perturbations(const SystemSpec& spec, int vertices, double dt,
                                                             std::size_t length, std::uint64_t seed);

/// Methods: "ritini" and the baseline names gc, oce, mte, mmi, pc.
struct BenchmarkConfig {
  std::vector<SystemSpec> systems;
  std::vector<std::string> methods{"ritini", "gc", "oce", "mte", "mmi", "pc"};
  int replicates = 5;
  std::uint64_t seed = 1;
  model::TrainConfig train;
  baselines::BaselineConfig baseline;
  /// "auto-gc" (default) or "dense".
  std::string prior = "auto-gc";
  double threshold = 0.1;
  double holdout = 0.1;
  int workers = 1;
  bool ablation = false;
  bool large = false;
  std::filesystem::path out;

  void validate() const;
};

/// INI file with sections [systems], [methods], [report].
BenchmarkConfig load_config(const std::filesystem::path& path);

struct CellResult {
  std::string system;
  std::string method;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double ged = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::optional<double> heldout_mse;
  double wall_seconds = 0.0;
  std::vector<std::string> warnings;
};

struct Aggregate {
  std::string system;
  std::string method;
  std::size_t runs = 0;
  std::size_t failed = 0;
  std::optional<double> mean;
  std::optional<double> sd;  // only with >= 2 successful runs
};

struct InferenceReport {
  std::vector<std::string> systems;
  std::vector<std::string> methods;
  std::vector<CellResult> cells;
  nlohmann::json settings;

  std::vector<Aggregate> aggregate() const;
  Aggregate aggregate(const std::string& system, const std::string& method) const;
  std::string csv() const;
  nlohmann::json to_json() const;
};

/// Prior for RiTINI when the dataset has none: Granger graph on the
/// unperturbed series ("auto-gc") or an empty prior with dense support.
/// auto-gc falls back to dense support (and warns) on a rank-deficient design.
graph::PriorGraph build_prior(const data::Dataset& dataset, const std::string& mode, const baselines::BaselineConfig& gc,
                              std::vector<std::string>* warnings = nullptr);

InferenceReport run_benchmark(const BenchmarkConfig& config);
void write_report(const InferenceReport& report, const std::filesystem::path& dir);

enum class Metric { ged, precision, recall };
Metric parse_metric(const std::string& name);

struct Evaluation {
  double value = 0.0;
  std::optional<std::string> warning;
};
Evaluation evaluate(const graph::WeightedDigraph& pred, const graph::WeightedDigraph& truth, Metric metric);
/// `truth` is a graph file or a dataset directory with a ground truth.
Evaluation evaluate(const std::filesystem::path& pred, const std::filesystem::path& truth, Metric metric);

/// Raises the allocator's mmap and trim thresholds so the many large
/// temporaries of training are recycled instead of mapped and unmapped.
void tune_allocator();

}  // namespace ritini::bench
