#include "ritini/dataset.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "ritini/graph_json.hpp"

namespace ritini::data {

namespace {

constexpr double kGridTolerance = 1e-9;

std::vector<std::string> default_names(int n) {
  std::vector<std::string> names;
  names.reserve(n);
  for (int v = 0; v < n; ++v) names.push_back(fmt::format("v{}", v));
  return names;
}

}  // namespace

std::string format_double(double v) { return fmt::format("{:.17g}", v); }

MultivariateTimeSeries::MultivariateTimeSeries(std::vector<double> times, Eigen::MatrixXd values,
                                               std::vector<std::string> vertex_names)
    : times_(std::move(times)), values_(std::move(values)), names_(std::move(vertex_names)) {
  if (times_.empty()) throw ValidationError("time series has no timepoints");
  if (static_cast<Eigen::Index>(times_.size()) != values_.rows()) {
    throw ValidationError(fmt::format("{} times but {} value rows", times_.size(), values_.rows()));
  }
  if (names_.empty()) names_ = default_names(static_cast<int>(values_.cols()));
  if (static_cast<Eigen::Index>(names_.size()) != values_.cols()) {
    throw ValidationError(fmt::format("{} vertex names for {} columns", names_.size(), values_.cols()));
  }
  if (!values_.allFinite()) throw ValidationError("time series contains non-finite values");
  if (times_.size() >= 2) {
    const double step = times_[1] - times_[0];
    if (!(step > 0.0)) throw ValidationError("time column is not strictly increasing");
    for (std::size_t k = 1; k < times_.size(); ++k) {
      const double d = times_[k] - times_[k - 1];
      if (!(d > 0.0)) throw ValidationError(fmt::format("time column is not strictly increasing at row {}", k));
      if (std::abs(d - step) > kGridTolerance * std::max(1.0, std::abs(step))) {
        throw ValidationError(fmt::format("time grid is not uniform at row {}", k));
      }
    }
  }
}

double MultivariateTimeSeries::dt() const {
  if (times_.size() < 2) return 1.0;
  return (times_.back() - times_.front()) / static_cast<double>(times_.size() - 1);
}

bool MultivariateTimeSeries::on_grid(double t) const {
  const double step = dt();
  const double k = std::round((t - times_.front()) / step);
  return k >= 0 && k < static_cast<double>(times_.size()) &&
         std::abs(times_.front() + k * step - t) <= kGridTolerance * std::max(1.0, std::abs(t));
}

std::size_t MultivariateTimeSeries::index_of(double t) const {
  if (!on_grid(t)) throw AlignmentError(fmt::format("time {} is not on the series grid", t));
  return static_cast<std::size_t>(std::llround((t - times_.front()) / dt()));
}

void Dataset::validate() const {
  if (series.empty()) throw ValidationError("dataset has no series");
  const int n = series.front().vertex_count();
  const double step = series.front().dt();
  for (std::size_t s = 0; s < series.size(); ++s) {
    if (series[s].vertex_count() != n) throw ValidationError(fmt::format("series {} has {} vertices, expected {}", s, series[s].vertex_count(), n));
    if (std::abs(series[s].dt() - step) > 1e-9 * std::max(1.0, step)) {
      throw ValidationError(fmt::format("series {} has step {}, expected {}", s, series[s].dt(), step));
    }
  }
  for (const auto& [idx, records] : perturbations) {
    if (idx >= series.size()) throw ValidationError(fmt::format("perturbation references missing series {}", idx));
    for (const auto& r : records) {
      if (r.vertex < 0 || r.vertex >= n) throw ValidationError(fmt::format("perturbation vertex {} out of range", r.vertex));
      if (!series[idx].on_grid(r.time)) throw AlignmentError(fmt::format("perturbation time {} is not on the grid", r.time));
    }
  }
  if (ground_truth && ground_truth->n() != n) throw ValidationError("ground truth vertex count differs from data");
  if (prior && prior->n() != n) throw ValidationError("prior vertex count differs from data");
}

int Dataset::vertex_count() const { return series.empty() ? 0 : series.front().vertex_count(); }
double Dataset::dt() const { return series.empty() ? 1.0 : series.front().dt(); }

bool Dataset::is_perturbed(std::size_t s) const {
  auto it = perturbations.find(s);
  return it != perturbations.end() && !it->second.empty();
}

std::vector<std::size_t> Dataset::unperturbed_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < series.size(); ++s) {
    if (!is_perturbed(s)) out.push_back(s);
  }
  return out;
}

std::vector<std::size_t> Dataset::perturbed_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < series.size(); ++s) {
    if (is_perturbed(s)) out.push_back(s);
  }
  return out;
}

Eigen::MatrixXd lag_window(const MultivariateTimeSeries& series, double t, int lags, const LagOverrides* history) {
  if (lags < 1) throw ValidationError("lag window needs at least one lag");
  const auto base = static_cast<std::int64_t>(series.index_of(t));
  const auto last = static_cast<std::int64_t>(series.length()) - 1;
  Eigen::MatrixXd window(lags, series.vertex_count());
  for (int l = 0; l < lags; ++l) {
    const std::int64_t k = base - l;
    if (history) {
      if (auto it = history->find(k); it != history->end()) {
        window.row(l) = it->second;
        continue;
      }
    }
    window.row(l) = series.values().row(std::clamp<std::int64_t>(k, 0, last));
  }
  return window;
}

MultivariateTimeSeries apply_perturbation(const MultivariateTimeSeries& series, const PerturbationRecord& record) {
  if (record.vertex < 0 || record.vertex >= series.vertex_count()) {
    throw ValidationError(fmt::format("perturbation vertex {} out of range", record.vertex));
  }
  const std::size_t k = series.index_of(record.time);
  Eigen::MatrixXd values = series.values();
  values(static_cast<Eigen::Index>(k), record.vertex) += record.epsilon;
  return MultivariateTimeSeries(series.times(), std::move(values), series.vertex_names());
}

HoldoutSplit split_holdout(const MultivariateTimeSeries& series, double fraction, std::uint64_t seed) {
  const std::size_t T = series.length();
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("holdout fraction must lie in (0, 1)");
  if (T < 4) throw InsufficientDataError("holdout split needs at least 4 timepoints");
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(T)));
  if (count > T - 2 || T - count < 2) {
    throw InsufficientDataError(fmt::format("holding out {} of {} points leaves fewer than 2 training points", count, T));
  }
  std::vector<std::size_t> interior(T - 2);
  std::iota(interior.begin(), interior.end(), std::size_t{1});
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, interior.size() - 1);
    std::swap(interior[k], interior[pick(rng)]);
  }
  HoldoutSplit split;
  split.held_out.assign(interior.begin(), interior.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(split.held_out.begin(), split.held_out.end());
  for (std::size_t k = 0; k < T; ++k) {
    if (!std::binary_search(split.held_out.begin(), split.held_out.end(), k)) split.train.push_back(k);
  }
  return split;
}

void write_series_csv(const std::filesystem::path& path, const MultivariateTimeSeries& series) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << "time";
  for (int v = 0; v < series.vertex_count(); ++v) out << ",v" << v;
  out << '\n';
  for (std::size_t k = 0; k < series.length(); ++k) {
    out << format_double(series.times()[k]);
    for (int v = 0; v < series.vertex_count(); ++v) out << ',' << format_double(series.values()(static_cast<Eigen::Index>(k), v));
    out << '\n';
  }
}

MultivariateTimeSeries read_series_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
  std::string line;
  if (!std::getline(in, line)) throw ParseError(fmt::format("{}:1: empty file", path.string()));
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.empty() || header.front() != "time") throw ParseError(fmt::format("{}:1: first column must be 'time'", path.string()));
  const std::size_t n = header.size() - 1;
  std::vector<double> times;
  std::vector<double> flat;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0') {
        throw ParseError(fmt::format("{}:{}: cannot parse '{}' as a number", path.string(), line_no, cell));
      }
      if (col == 0) times.push_back(v);
      else flat.push_back(v);
      ++col;
    }
    if (col != n + 1) throw ParseError(fmt::format("{}:{}: expected {} columns, found {}", path.string(), line_no, n + 1, col));
  }
  Eigen::MatrixXd values(static_cast<Eigen::Index>(times.size()), static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < times.size(); ++k) {
    for (std::size_t v = 0; v < n; ++v) values(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(v)) = flat[k * n + v];
  }
  try {
    return MultivariateTimeSeries(std::move(times), std::move(values));
  } catch (const ValidationError& ex) {
    throw ValidationError(fmt::format("{}: {}", path.string(), ex.what()));
  }
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& directory) {
  dataset.validate();
  std::filesystem::create_directories(directory);
  for (std::size_t s = 0; s < dataset.series.size(); ++s) {
    write_series_csv(directory / fmt::format("timeseries_{}.csv", s), dataset.series[s]);
  }
  nlohmann::json meta;
  meta["dt"] = dataset.dt();
  meta["vertices"] = dataset.series.front().vertex_names();
  nlohmann::json truth = nlohmann::json::array();
  if (dataset.ground_truth) {
    for (const auto& e : dataset.ground_truth->edges()) truth.push_back({e.src, e.dst});
  }
  meta["ground_truth_edges"] = truth;
  meta["has_ground_truth"] = dataset.ground_truth.has_value();
  nlohmann::json perts = nlohmann::json::array();
  for (const auto& [idx, records] : dataset.perturbations) {
    for (const auto& r : records) {
      nlohmann::json p{{"series", idx}, {"vertex", r.vertex}, {"time", r.time}, {"epsilon", r.epsilon}};
      if (!r.parameter.empty()) p["parameter"] = r.parameter;
      perts.push_back(std::move(p));
    }
  }
  meta["perturbations"] = perts;
  if (dataset.prior) meta["prior"] = graph::to_json(dataset.prior->digraph());
  graph::write_json_file(directory / "meta.json", meta);
}

Dataset load_dataset(const std::filesystem::path& directory) {
  const auto meta_path = directory / "meta.json";
  if (!std::filesystem::exists(meta_path)) throw ParseError(fmt::format("{} is missing", meta_path.string()));
  const auto meta = graph::read_json_file(meta_path);
  Dataset ds;
  std::vector<std::string> names;
  try {
    names = meta.at("vertices").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(fmt::format("{}: {}", meta_path.string(), ex.what()));
  }
  for (std::size_t s = 0;; ++s) {
    const auto csv = directory / fmt::format("timeseries_{}.csv", s);
    if (!std::filesystem::exists(csv)) break;
    auto series = read_series_csv(csv);
    if (static_cast<std::size_t>(series.vertex_count()) != names.size()) {
      throw ParseError(fmt::format("{}: {} columns but meta.json lists {} vertices", csv.string(), series.vertex_count(), names.size()));
    }
    ds.series.emplace_back(series.times(), series.values(), names);
  }
  if (ds.series.empty()) throw ParseError(fmt::format("{} contains no timeseries_<k>.csv", directory.string()));
  const int n = static_cast<int>(names.size());
  try {
    const bool has_truth = meta.value("has_ground_truth", !meta.at("ground_truth_edges").empty());
    if (has_truth) {
      graph::WeightedDigraph truth(n);
      for (const auto& e : meta.at("ground_truth_edges")) truth.set_edge(e.at(0).get<int>(), e.at(1).get<int>(), 1.0);
      ds.ground_truth = std::move(truth);
    }
    for (const auto& p : meta.value("perturbations", nlohmann::json::array())) {
      PerturbationRecord r{p.at("vertex").get<int>(), p.at("time").get<double>(), p.at("epsilon").get<double>(),
                           p.value("parameter", std::string{})};
      ds.perturbations[p.at("series").get<std::size_t>()].push_back(r);
    }
    if (meta.contains("prior") && !meta.at("prior").is_null()) ds.prior = graph::PriorGraph(graph::digraph_from_json(meta.at("prior")));
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(fmt::format("{}: {}", meta_path.string(), ex.what()));
  }
  if (meta.contains("dt") && std::abs(meta.at("dt").get<double>() - ds.dt()) > 1e-9 * std::max(1.0, ds.dt())) {
    throw ValidationError(fmt::format("{}: dt {} disagrees with the CSV grid step {}", meta_path.string(), meta.at("dt").get<double>(), ds.dt()));
  }
  ds.validate();
  return ds;
}

}  // namespace ritini::data
