#include "ritini/graph.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace ritini::graph {

namespace {

bool edge_less(const Edge& a, const Edge& b) {
  return a.src != b.src ? a.src < b.src : a.dst < b.dst;
}

}  // namespace

WeightedDigraph::WeightedDigraph(int n) : n_(n) {
  if (n < 0) throw ValidationError(fmt::format("vertex count must be nonnegative, got {}", n));
}

WeightedDigraph::WeightedDigraph(int n, std::vector<Edge> edges) : WeightedDigraph(n) {
  for (const auto& e : edges) {
    check_vertex(e.src);
    check_vertex(e.dst);
    if (!(e.weight > 0.0) || !std::isfinite(e.weight)) {
      throw ValidationError(fmt::format("edge {}->{} has non-positive weight {}", e.src, e.dst, e.weight));
    }
  }
  std::sort(edges.begin(), edges.end(), edge_less);
  for (std::size_t k = 1; k < edges.size(); ++k) {
    if (edges[k].src == edges[k - 1].src && edges[k].dst == edges[k - 1].dst) {
      throw ValidationError(fmt::format("duplicate edge {}->{}", edges[k].src, edges[k].dst));
    }
  }
  edges_ = std::move(edges);
}

void WeightedDigraph::check_vertex(int v) const {
  if (v < 0 || v >= n_) throw ValidationError(fmt::format("vertex {} out of range [0, {})", v, n_));
}

void WeightedDigraph::set_edge(int src, int dst, double weight) {
  check_vertex(src);
  check_vertex(dst);
  if (!(weight > 0.0) || !std::isfinite(weight)) {
    throw ValidationError(fmt::format("edge {}->{} has non-positive weight {}", src, dst, weight));
  }
  Edge e{src, dst, weight};
  auto it = std::lower_bound(edges_.begin(), edges_.end(), e, edge_less);
  if (it != edges_.end() && it->src == src && it->dst == dst) {
    it->weight = weight;
  } else {
    edges_.insert(it, e);
  }
}

void WeightedDigraph::remove_edge(int src, int dst) {
  Edge e{src, dst, 1.0};
  auto it = std::lower_bound(edges_.begin(), edges_.end(), e, edge_less);
  if (it != edges_.end() && it->src == src && it->dst == dst) edges_.erase(it);
}

bool WeightedDigraph::has_edge(int src, int dst) const { return weight(src, dst) > 0.0; }

double WeightedDigraph::weight(int src, int dst) const {
  Edge e{src, dst, 1.0};
  auto it = std::lower_bound(edges_.begin(), edges_.end(), e, edge_less);
  if (it != edges_.end() && it->src == src && it->dst == dst) return it->weight;
  return 0.0;
}

Eigen::MatrixXd WeightedDigraph::adjacency() const {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n_, n_);
  for (const auto& e : edges_) a(e.src, e.dst) = e.weight;
  return a;
}

Eigen::MatrixXd WeightedDigraph::incoming() const { return adjacency().transpose(); }

WeightedDigraph WeightedDigraph::without_self_loops() const {
  WeightedDigraph out(n_);
  for (const auto& e : edges_) {
    if (e.src != e.dst) out.edges_.push_back(e);
  }
  return out;
}

PriorGraph::PriorGraph(WeightedDigraph digraph)
    : PriorGraph(digraph, Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(digraph.n(), digraph.n(), false)) {}

PriorGraph PriorGraph::dense(WeightedDigraph digraph) {
  const int n = digraph.n();
  return PriorGraph(std::move(digraph), Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, n, true));
}

PriorGraph::PriorGraph(WeightedDigraph digraph, Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> support)
    : digraph_(std::move(digraph)), support_(std::move(support)) {
  const int n = digraph_.n();
  if (support_.rows() != n || support_.cols() != n) {
    throw SizeMismatchError(fmt::format("support is {}x{} but prior has {} vertices", support_.rows(), support_.cols(), n));
  }
  for (int i = 0; i < n; ++i) support_(i, i) = true;
  for (const auto& e : digraph_.edges()) support_(e.dst, e.src) = true;
}

Eigen::MatrixXd PriorGraph::attention_target() const {
  const int n = digraph_.n();
  Eigen::MatrixXd target = Eigen::MatrixXd::Identity(n, n);
  for (const auto& e : digraph_.edges()) target(e.dst, e.src) = 1.0;
  for (int i = 0; i < n; ++i) target.row(i) /= target.row(i).sum();
  return target;
}

std::size_t graph_edit_distance(const WeightedDigraph& pred, const WeightedDigraph& truth) {
  const auto overlap = edge_overlap(pred, truth);
  return (overlap.predicted - overlap.common) + (overlap.truth - overlap.common);
}

EdgeOverlap edge_overlap(const WeightedDigraph& pred, const WeightedDigraph& truth) {
  if (pred.n() != truth.n()) {
    throw SizeMismatchError(fmt::format("graphs have {} and {} vertices", pred.n(), truth.n()));
  }
  EdgeOverlap out;
  for (const auto& e : pred.edges()) {
    if (e.src == e.dst) continue;
    ++out.predicted;
    if (truth.has_edge(e.src, e.dst)) ++out.common;
  }
  for (const auto& e : truth.edges()) {
    if (e.src != e.dst) ++out.truth;
  }
  return out;
}

WeightedDigraph binarize(const WeightedDigraph& weighted, double threshold) {
  if (threshold < 0.0) throw ValidationError("binarization threshold must be nonnegative");
  WeightedDigraph out(weighted.n());
  for (const auto& e : weighted.edges()) {
    if (e.src != e.dst && e.weight > threshold) out.set_edge(e.src, e.dst, 1.0);
  }
  return out;
}

WeightedDigraph binarize(const Eigen::MatrixXd& attention, double threshold) {
  if (threshold < 0.0) throw ValidationError("binarization threshold must be nonnegative");
  if (attention.rows() != attention.cols()) throw SizeMismatchError("attention matrix must be square");
  const int n = static_cast<int>(attention.rows());
  WeightedDigraph out(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j && attention(i, j) > threshold) out.set_edge(j, i, 1.0);
    }
  }
  return out;
}

WeightedDigraph attention_to_digraph(const Eigen::MatrixXd& attention) {
  if (attention.rows() != attention.cols()) throw SizeMismatchError("attention matrix must be square");
  const int n = static_cast<int>(attention.rows());
  std::vector<Edge> edges;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      if (attention(i, j) > 0.0) edges.push_back({j, i, attention(i, j)});
    }
  }
  return WeightedDigraph(n, std::move(edges));
}

Eigen::MatrixXd mean_snapshot(const AttentionTrajectory& traj) {
  if (traj.empty()) throw EmptyInputError("attention trajectory has no snapshots");
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(traj.snapshots.front().rows(), traj.snapshots.front().cols());
  for (const auto& s : traj.snapshots) {
    if (s.rows() != acc.rows() || s.cols() != acc.cols()) throw SizeMismatchError("snapshots differ in shape");
    acc += s;
  }
  return acc / static_cast<double>(traj.size());
}

WeightedDigraph time_average(const AttentionTrajectory& traj) { return attention_to_digraph(mean_snapshot(traj)); }

double prior_deviation(const Eigen::MatrixXd& snapshot, const PriorGraph& prior) {
  if (snapshot.rows() != prior.n() || snapshot.cols() != prior.n()) {
    throw SizeMismatchError(fmt::format("snapshot is {}x{} but prior has {} vertices", snapshot.rows(), snapshot.cols(), prior.n()));
  }
  return (snapshot - prior.digraph().incoming()).norm();
}

}  // namespace ritini::graph
