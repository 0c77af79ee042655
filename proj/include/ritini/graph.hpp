#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

#include "ritini/errors.hpp"

namespace ritini::graph {

struct Edge {
  int src = 0;
  int dst = 0;
  double weight = 1.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Static weighted directed graph on vertices [0, n).
///
/// At most one edge per ordered pair; every stored edge has a strictly
/// positive weight. Edges are kept sorted by (src, dst) so that equality and
/// serialization are independent of insertion order.
class WeightedDigraph {
 public:
  WeightedDigraph() = default;
  explicit WeightedDigraph(int n);
  WeightedDigraph(int n, std::vector<Edge> edges);

  int n() const { return n_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::size_t edge_count() const { return edges_.size(); }

  /// Inserts or overwrites the edge src->dst.
  void set_edge(int src, int dst, double weight = 1.0);
  void remove_edge(int src, int dst);
  bool has_edge(int src, int dst) const;
  double weight(int src, int dst) const;  // 0 when absent

  /// Dense adjacency, A(src, dst) = weight.
  Eigen::MatrixXd adjacency() const;
  /// Dense matrix in attention orientation, M(dst, src) = weight.
  Eigen::MatrixXd incoming() const;

  WeightedDigraph without_self_loops() const;

  friend bool operator==(const WeightedDigraph&, const WeightedDigraph&) = default;

 private:
  void check_vertex(int v) const;

  int n_ = 0;
  std::vector<Edge> edges_;
};

/// Prior graph plus the set of ordered pairs allowed to carry attention.
///
/// Support is stored in attention orientation: support(i, j) == true means
/// vertex i may attend to vertex j, i.e. the edge j->i may be inferred. The
/// support always contains every self-loop and every prior edge.
class PriorGraph {
 public:
  PriorGraph() = default;
  /// Support = prior edges plus self-loops.
  explicit PriorGraph(WeightedDigraph digraph);
  /// Support = every ordered pair.
  static PriorGraph dense(WeightedDigraph digraph);
  /// Support given explicitly; prior edges and self-loops are added to it.
  PriorGraph(WeightedDigraph digraph, Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> support);

  int n() const { return digraph_.n(); }
  const WeightedDigraph& digraph() const { return digraph_; }
  const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& support() const { return support_; }
  bool allows(int target, int source) const { return support_(target, source); }

  /// Row-normalized indicator of (prior edges + self-loops) in attention
  /// orientation: the attention matrix that agrees exactly with the prior.
  Eigen::MatrixXd attention_target() const;

 private:
  WeightedDigraph digraph_;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> support_;
};

/// Time-indexed attention matrices. Snapshot rows are attending (target)
/// vertices and columns are attended (source) vertices.
struct AttentionTrajectory {
  std::vector<double> times;
  std::vector<Eigen::MatrixXd> snapshots;

  bool empty() const { return snapshots.empty(); }
  std::size_t size() const { return snapshots.size(); }
};

/// Number of directed edge insertions plus deletions turning pred into truth.
/// Self-loops and weights are ignored.
std::size_t graph_edit_distance(const WeightedDigraph& pred, const WeightedDigraph& truth);

/// Keeps edges with weight > threshold and drops self-loops.
WeightedDigraph binarize(const WeightedDigraph& weighted, double threshold);

/// Thresholds an attention snapshot: alpha(i, j) > threshold yields j -> i.
WeightedDigraph binarize(const Eigen::MatrixXd& attention, double threshold);

/// Converts an attention matrix to a weighted digraph (j -> i with weight
/// alpha(i, j)); zero entries produce no edge. Self-loops are kept.
WeightedDigraph attention_to_digraph(const Eigen::MatrixXd& attention);

/// Mean attention over all snapshots, as a digraph.
WeightedDigraph time_average(const AttentionTrajectory& traj);
Eigen::MatrixXd mean_snapshot(const AttentionTrajectory& traj);

/// Frobenius distance between an attention snapshot and the prior adjacency
/// (attention orientation).
double prior_deviation(const Eigen::MatrixXd& snapshot, const PriorGraph& prior);

/// Edge counts used by the precision/recall metrics (self-loops excluded).
struct EdgeOverlap {
  std::size_t predicted = 0;
  std::size_t truth = 0;
  std::size_t common = 0;
};
EdgeOverlap edge_overlap(const WeightedDigraph& pred, const WeightedDigraph& truth);

}  // namespace ritini::graph
