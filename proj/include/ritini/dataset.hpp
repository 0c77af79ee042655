#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ritini/graph.hpp"

namespace ritini::data {

/// Vertex signals sampled on a uniform time grid.
/// values(t, v) is the feature of vertex v at times[t].
class MultivariateTimeSeries {
 public:
  MultivariateTimeSeries() = default;
  MultivariateTimeSeries(std::vector<double> times, Eigen::MatrixXd values, std::vector<std::string> vertex_names = {});

  const std::vector<double>& times() const { return times_; }
  const Eigen::MatrixXd& values() const { return values_; }
  Eigen::MatrixXd& mutable_values() { return values_; }
  const std::vector<std::string>& vertex_names() const { return names_; }

  std::size_t length() const { return times_.size(); }
  int vertex_count() const { return static_cast<int>(values_.cols()); }
  double dt() const;
  double start() const { return times_.front(); }
  double end() const { return times_.back(); }

  /// Grid index of time t; throws AlignmentError when t is not on the grid.
  std::size_t index_of(double t) const;
  bool on_grid(double t) const;

 private:
  std::vector<double> times_;
  Eigen::MatrixXd values_;
  std::vector<std::string> names_;
};

/// Additive injection at one vertex and grid time. For the spiking simulator
/// `parameter` names the neuron parameter that is shifted instead of the
/// signal itself.
struct PerturbationRecord {
  int vertex = 0;
  double time = 0.0;
  double epsilon = 0.0;
  std::string parameter;

  friend bool operator==(const PerturbationRecord&, const PerturbationRecord&) = default;
};

struct Dataset {
  std::vector<MultivariateTimeSeries> series;
  std::map<std::size_t, std::vector<PerturbationRecord>> perturbations;
  std::optional<graph::WeightedDigraph> ground_truth;
  std::optional<graph::PriorGraph> prior;

  /// Checks shared vertex count and step, and perturbation references.
  void validate() const;
  int vertex_count() const;
  double dt() const;
  bool is_perturbed(std::size_t series_index) const;
  std::vector<std::size_t> unperturbed_indices() const;
  std::vector<std::size_t> perturbed_indices() const;
};

/// Overrides keyed by grid index (may be negative or past the end); rows take
/// precedence over observed values when building lag windows.
using LagOverrides = std::map<std::int64_t, Eigen::RowVectorXd>;

/// Rows l = 0..lags-1 hold X(., t - l*dt). Times before the series start repeat
/// the first observation.
Eigen::MatrixXd lag_window(const MultivariateTimeSeries& series, double t, int lags,
                           const LagOverrides* history = nullptr);

/// Copy of `series` with only the entry (record.time, record.vertex) shifted by epsilon.
MultivariateTimeSeries apply_perturbation(const MultivariateTimeSeries& series, const PerturbationRecord& record);

struct HoldoutSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> held_out;
};

/// Holds out floor(fraction * T) interior grid indices chosen uniformly at
/// random. Both index lists are returned sorted.
HoldoutSplit split_holdout(const MultivariateTimeSeries& series, double fraction, std::uint64_t seed);

void save_dataset(const Dataset& dataset, const std::filesystem::path& directory);
Dataset load_dataset(const std::filesystem::path& directory);

void write_series_csv(const std::filesystem::path& path, const MultivariateTimeSeries& series);
MultivariateTimeSeries read_series_csv(const std::filesystem::path& path);

/// Shortest-exact float formatting used by every CSV writer (17 significant digits).
std::string format_double(double v);

}  // namespace ritini::data
