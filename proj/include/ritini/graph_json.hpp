#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ritini/graph.hpp"

namespace ritini::graph {

/// Sequence of graphs indexed by time.
struct DynamicGraph {
  std::vector<double> times;
  std::vector<WeightedDigraph> snapshots;

  friend bool operator==(const DynamicGraph&, const DynamicGraph&) = default;
};

nlohmann::json to_json(const WeightedDigraph& g);
WeightedDigraph digraph_from_json(const nlohmann::json& j);

nlohmann::json to_json(const DynamicGraph& g);
DynamicGraph dynamic_graph_from_json(const nlohmann::json& j);

/// Raw attention (self-loops included) as a dynamic graph.
DynamicGraph to_dynamic_graph(const AttentionTrajectory& traj);

void write_graph(const std::filesystem::path& path, const WeightedDigraph& g);
WeightedDigraph read_graph(const std::filesystem::path& path);
void write_dynamic_graph(const std::filesystem::path& path, const DynamicGraph& g);
DynamicGraph read_dynamic_graph(const std::filesystem::path& path);

/// Reads a whole JSON file, reporting the file name on parse failure.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace ritini::graph
