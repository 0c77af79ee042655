#include <doctest.h>

#include <random>
#include <vector>

#include "ritini/graph.hpp"
#include "ritini/graph_json.hpp"

using namespace ritini;
using namespace ritini::graph;

namespace {

WeightedDigraph from_bits(int n, unsigned bits) {
  WeightedDigraph g(n);
  int k = 0;
  for (int s = 0; s < n; ++s)
    for (int d = 0; d < n; ++d) {
      if (s == d) continue;
      if (bits & (1u << k)) g.set_edge(s, d);
      ++k;
    }
  return g;
}

WeightedDigraph random_graph(int n, double p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  WeightedDigraph g(n);
  for (int s = 0; s < n; ++s)
    for (int d = 0; d < n; ++d)
      if (u(rng) < p) g.set_edge(s, d, 0.05 + u(rng));
  return g;
}

WeightedDigraph truth5() { return WeightedDigraph(5, {{0, 1}, {0, 2}, {0, 3}, {3, 4}, {4, 3}}); }

}  // namespace

TEST_SUITE("graph") {

TEST_CASE("digraph keeps one positive edge per pair") {
  WeightedDigraph g(3);
  g.set_edge(0, 1, 0.5);
  g.set_edge(0, 1, 0.7);
  CHECK(g.edge_count() == 1);
  CHECK(g.weight(0, 1) == doctest::Approx(0.7));
  CHECK_THROWS_AS(g.set_edge(0, 3, 1.0), Error);
  CHECK_THROWS_AS(g.set_edge(0, 1, 0.0), Error);
  CHECK_THROWS_AS(g.set_edge(0, 1, -1.0), Error);
  g.remove_edge(0, 1);
  CHECK(g.edge_count() == 0);
}

TEST_CASE("edge order does not depend on insertion order") {
  WeightedDigraph a(3), b(3);
  a.set_edge(2, 0);
  a.set_edge(0, 1);
  b.set_edge(0, 1);
  b.set_edge(2, 0);
  CHECK(a == b);
}

TEST_CASE("GED examples") {
  std::mt19937_64 rng(3);
  auto g = random_graph(6, 0.4, rng);
  CHECK(graph_edit_distance(g, g) == 0);
  WeightedDigraph pred(5, {{0, 1}, {0, 2}, {3, 4}});
  CHECK(graph_edit_distance(pred, truth5()) == 2);
  CHECK(graph_edit_distance(WeightedDigraph(5), truth5()) == 5);
  CHECK_THROWS_AS(graph_edit_distance(WeightedDigraph(4), truth5()), SizeMismatchError);
}

TEST_CASE("GED ignores weights and self-loops") {
  WeightedDigraph a(3, {{0, 1, 0.2}, {1, 1, 3.0}});
  WeightedDigraph b(3, {{0, 1, 5.0}});
  CHECK(graph_edit_distance(a, b) == 0);
}

TEST_CASE("GED metric axioms on random triples") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> size(1, 8);
  for (int trial = 0; trial < 300; ++trial) {
    int n = size(rng);
    auto a = random_graph(n, 0.3, rng), b = random_graph(n, 0.5, rng), c = random_graph(n, 0.2, rng);
    CHECK(graph_edit_distance(a, a) == 0);
    CHECK(graph_edit_distance(a, b) == graph_edit_distance(b, a));
    CHECK(graph_edit_distance(a, c) <= graph_edit_distance(a, b) + graph_edit_distance(b, c));
  }
}

TEST_CASE("GED equals breadth-first edge toggling distance for n <= 3") {
  for (int n = 1; n <= 3; ++n) {
    const int m = n * (n - 1);
    const unsigned count = 1u << m;
    for (unsigned src = 0; src < count; ++src) {
      std::vector<int> dist(count, -1);
      std::vector<unsigned> queue{src};
      dist[src] = 0;
      for (std::size_t q = 0; q < queue.size(); ++q)
        for (int b = 0; b < m; ++b) {
          unsigned next = queue[q] ^ (1u << b);
          if (dist[next] < 0) {
            dist[next] = dist[queue[q]] + 1;
            queue.push_back(next);
          }
        }
      for (unsigned dst = 0; dst < count; ++dst)
        CHECK(graph_edit_distance(from_bits(n, src), from_bits(n, dst)) == static_cast<std::size_t>(dist[dst]));
    }
  }
}

TEST_CASE("binarize examples") {
  Eigen::MatrixXd half = Eigen::MatrixXd::Constant(3, 3, 0.5);
  CHECK(binarize(half, 0.9).edge_count() == 0);
  CHECK(binarize(half, 0.1).edge_count() == 6);
  Eigen::MatrixXd row = Eigen::MatrixXd::Zero(3, 3);
  row.row(0) << 0.7, 0.2, 0.1;
  auto g = binarize(row, 0.15);
  // Row 0 attends to columns 0 (self, dropped) and 1.
  CHECK(g.edge_count() == 1);
  CHECK(g.has_edge(1, 0));
  Eigen::MatrixXd row2 = Eigen::MatrixXd::Zero(3, 3);
  row2.row(0) << 0.2, 0.7, 0.1;
  auto g2 = binarize(row2, 0.15);
  CHECK(g2.edge_count() == 1);
  CHECK(g2.has_edge(1, 0));
  CHECK_THROWS_AS(binarize(half, -0.1), Error);
}

TEST_CASE("binarize is monotone in the threshold") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto g = random_graph(6, 0.5, rng);
    std::size_t prev = binarize(g, 0.0).edge_count();
    for (double t = 0.05; t < 1.2; t += 0.05) {
      auto b = binarize(g, t);
      CHECK(b.edge_count() <= prev);
      for (const auto& e : b.edges()) CHECK(binarize(g, t - 0.05).has_edge(e.src, e.dst));
      prev = b.edge_count();
    }
  }
}

TEST_CASE("time average") {
  AttentionTrajectory traj;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2, 2), b = Eigen::MatrixXd::Zero(2, 2);
  a(0, 1) = 0.2;
  b(0, 1) = 0.4;
  traj.times = {0.0, 1.0};
  traj.snapshots = {a, b};
  auto g = time_average(traj);
  // alpha(0,1) means 1 -> 0.
  CHECK(g.weight(1, 0) == doctest::Approx(0.3));
  CHECK(g.edge_count() == 1);
  AttentionTrajectory constant{{0.0, 1.0, 2.0}, {a, a, a}};
  CHECK(mean_snapshot(constant).isApprox(a, 1e-15));
  auto avg = time_average(constant);
  CHECK(avg.edge_count() == 1);
  CHECK(avg.weight(1, 0) == doctest::Approx(0.2));
  CHECK_THROWS_AS(time_average(AttentionTrajectory{}), EmptyInputError);
}

TEST_CASE("prior deviation") {
  PriorGraph prior(WeightedDigraph(3, {{0, 1}, {1, 2}}));
  Eigen::MatrixXd adj = prior.digraph().incoming();
  CHECK(prior_deviation(adj, prior) == doctest::Approx(0.0));
  Eigen::MatrixXd off = adj;
  off(2, 0) += 0.3;
  CHECK(prior_deviation(off, prior) == doctest::Approx(0.3));
  CHECK(prior_deviation(Eigen::MatrixXd::Zero(3, 3), prior) == doctest::Approx(std::sqrt(2.0)));
  CHECK_THROWS_AS(prior_deviation(Eigen::MatrixXd::Zero(2, 2), prior), SizeMismatchError);
}

TEST_CASE("prior support contains the prior and every self-loop") {
  PriorGraph prior(WeightedDigraph(3, {{0, 1}}));
  CHECK(prior.allows(1, 0));
  CHECK_FALSE(prior.allows(0, 1));
  for (int i = 0; i < 3; ++i) CHECK(prior.allows(i, i));
  auto dense = PriorGraph::dense(WeightedDigraph(3));
  CHECK(dense.support().all());
  Eigen::MatrixXd target = prior.attention_target();
  CHECK(target.rowwise().sum().isApproxToConstant(1.0));
  CHECK(target(1, 0) == doctest::Approx(0.5));
}

TEST_CASE("graph JSON round trip is byte stable") {
  std::mt19937_64 rng(9);
  auto g = random_graph(5, 0.5, rng);
  auto j = to_json(g);
  CHECK(digraph_from_json(j) == g);
  CHECK(to_json(digraph_from_json(j)).dump() == j.dump());
  DynamicGraph d{{0.0, 0.5}, {g, WeightedDigraph(5)}};
  auto dj = to_json(d);
  auto back = dynamic_graph_from_json(dj);
  CHECK(back.times == d.times);
  CHECK(back.snapshots == d.snapshots);
  CHECK_THROWS_AS(digraph_from_json(nlohmann::json::parse(R"({"n": 2, "edges": [{"src": 0, "dst": 5, "weight": 1}]})")),
                  Error);
}

}
