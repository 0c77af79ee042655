#include "ritini/graph_json.hpp"

#include <fmt/format.h>

#include <fstream>
#include <sstream>

namespace ritini::graph {

using nlohmann::json;

json to_json(const WeightedDigraph& g) {
  json edges = json::array();
  for (const auto& e : g.edges()) edges.push_back({{"src", e.src}, {"dst", e.dst}, {"weight", e.weight}});
  return {{"n", g.n()}, {"edges", std::move(edges)}};
}

WeightedDigraph digraph_from_json(const json& j) {
  try {
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) {
      edges.push_back({e.at("src").get<int>(), e.at("dst").get<int>(), e.value("weight", 1.0)});
    }
    return WeightedDigraph(j.at("n").get<int>(), std::move(edges));
  } catch (const json::exception& ex) {
    throw ParseError(fmt::format("malformed graph JSON: {}", ex.what()));
  }
}

json to_json(const DynamicGraph& g) {
  json snaps = json::array();
  for (const auto& s : g.snapshots) snaps.push_back(to_json(s));
  return {{"times", g.times}, {"snapshots", std::move(snaps)}};
}

DynamicGraph dynamic_graph_from_json(const json& j) {
  DynamicGraph out;
  try {
    out.times = j.at("times").get<std::vector<double>>();
    for (const auto& s : j.at("snapshots")) out.snapshots.push_back(digraph_from_json(s));
  } catch (const json::exception& ex) {
    throw ParseError(fmt::format("malformed dynamic graph JSON: {}", ex.what()));
  }
  if (out.times.size() != out.snapshots.size()) {
    throw ParseError(fmt::format("dynamic graph has {} times but {} snapshots", out.times.size(), out.snapshots.size()));
  }
  return out;
}

DynamicGraph to_dynamic_graph(const AttentionTrajectory& traj) {
  DynamicGraph out;
  out.times = traj.times;
  for (const auto& s : traj.snapshots) out.snapshots.push_back(attention_to_digraph(s));
  return out;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
  try {
    return json::parse(in);
  } catch (const json::parse_error& ex) {
    throw ParseError(fmt::format("{}: {}", path.string(), ex.what()));
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << j.dump(2) << '\n';
}

void write_graph(const std::filesystem::path& path, const WeightedDigraph& g) { write_json_file(path, to_json(g)); }

WeightedDigraph read_graph(const std::filesystem::path& path) {
  try {
    return digraph_from_json(read_json_file(path));
  } catch (const ParseError& ex) {
    throw ParseError(fmt::format("{}: {}", path.string(), ex.what()));
  }
}

void write_dynamic_graph(const std::filesystem::path& path, const DynamicGraph& g) { write_json_file(path, to_json(g)); }

DynamicGraph read_dynamic_graph(const std::filesystem::path& path) {
  return dynamic_graph_from_json(read_json_file(path));
}

}  // namespace ritini::graph
