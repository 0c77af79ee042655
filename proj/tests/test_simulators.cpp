#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ritini/simulators.hpp"

using namespace ritini;
using namespace ritini::sim;

namespace {

// Independent recurrence for the five-node system, noise free.
Eigen::MatrixXd five_node_oracle(int T, const std::vector<double>& init) {
  const double r = std::sqrt(2.0);
  Eigen::MatrixXd x(T, 5);
  for (int t = 0; t < 3; ++t)
    for (int v = 0; v < 5; ++v) x(t, v) = init[v];
  for (int t = 3; t < T; ++t) {
    double a1 = x(t - 1, 0), a2 = x(t - 2, 0), a3 = x(t - 3, 0);
    x(t, 0) = 0.95 * r * a1 - 0.9025 * a2;
    x(t, 1) = 0.5 * a2 * a2;
    x(t, 2) = -0.4 * a3;
    x(t, 3) = -0.5 * a2 * a2 + 0.5 * r * x(t - 1, 3) + 0.25 * r * x(t - 1, 4);
    x(t, 4) = -0.5 * r * x(t - 1, 3) + 0.5 * r * x(t - 1, 4);
  }
  return x;
}

template <class F>
Eigen::VectorXd newton(F f, Eigen::VectorXd x) {
  const int n = static_cast<int>(x.size());
  for (int it = 0; it < 100; ++it) {
    Eigen::VectorXd fx = f(x);
    if (fx.norm() < 1e-13) break;
    Eigen::MatrixXd J(n, n);
    for (int j = 0; j < n; ++j) {
      Eigen::VectorXd h = x;
      const double step = 1e-7 * std::max(1.0, std::abs(x(j)));
      h(j) += step;
      J.col(j) = (f(h) - fx) / step;
    }
    x -= J.fullPivLu().solve(fx);
  }
  return x;
}

WilsonCowanConfig wc_base(int n, double p, std::uint64_t seed) {
  WilsonCowanConfig c;
  c.network = random_network(n, p, 0.8, seed);
  c.steps = 100;
  c.dt = 0.01;
  c.sample_every = 10;
  return c;
}

}  // namespace

TEST_SUITE("simulators") {

TEST_CASE("five-node ground truth") {
  auto ds = simulate_five_node({});
  REQUIRE(ds.ground_truth.has_value());
  graph::WeightedDigraph truth(5, {{0, 1}, {0, 2}, {0, 3}, {3, 4}, {4, 3}});
  CHECK(graph::graph_edit_distance(*ds.ground_truth, truth) == 0);
  CHECK(ds.ground_truth->edge_count() == 5);
}

TEST_CASE("five-node zero fixed point") {
  FiveNodeConfig c;
  c.noise_sigma = 0.0;
  c.steps = 200;
  auto ds = simulate_five_node(c);
  CHECK(ds.series[0].values().isZero(0.0));
  c.initial = {0, 0, 0, 0, 0};
  CHECK(simulate_five_node(c).series[0].values().isZero(0.0));
}

TEST_CASE("five-node matches an independent recurrence") {
  FiveNodeConfig c;
  c.noise_sigma = 0.0;
  c.steps = 100;
  c.initial = {0.3, -0.2, 0.1, 0.4, -0.5};
  auto ds = simulate_five_node(c);
  Eigen::MatrixXd oracle = five_node_oracle(100, c.initial);
  CHECK((ds.series[0].values() - oracle).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + oracle.cwiseAbs().maxCoeff()));
}

TEST_CASE("five-node determinism and shared noise") {
  FiveNodeConfig c;
  c.seed = 42;
  c.perturbations = {{2, 50.0, 0.5, ""}, {0, 60.0, 0.5, ""}};
  auto a = simulate_five_node(c);
  auto b = simulate_five_node(c);
  for (std::size_t k = 0; k < a.series.size(); ++k) CHECK(a.series[k].values() == b.series[k].values());
  // x3 has no outgoing edges: only its own column changes, from the injection on.
  Eigen::MatrixXd d = a.series[1].values() - a.series[0].values();
  CHECK(d.topRows(50).isZero(0.0));
  CHECK(d(50, 2) == doctest::Approx(0.5));
  for (int v : {0, 1, 3, 4}) CHECK(d.col(v).isZero(0.0));
  // x1 drives everything downstream.
  Eigen::MatrixXd e = a.series[2].values() - a.series[0].values();
  CHECK(e.topRows(60).isZero(0.0));
  for (int v = 0; v < 5; ++v) CHECK(e.col(v).cwiseAbs().maxCoeff() > 0.0);
  c.seed = 43;
  CHECK(simulate_five_node(c).series[0].values() != a.series[0].values());
}

TEST_CASE("random network examples") {
  CHECK(random_network(6, 0.0, 0.8, 1).graph.edge_count() == 0);
  CHECK(random_network(3, 1.0, 0.8, 1).graph.edge_count() == 6);
  auto a = random_network(20, 0.3, 0.8, 5), b = random_network(20, 0.3, 0.8, 5);
  CHECK(a.graph == b.graph);
  CHECK(a.excitatory == b.excitatory);
  auto big = random_network(50, 0.2, 0.8, 2);
  CHECK(big.excitatory_count() == 40);
  CHECK(big.n() - big.excitatory_count() == 10);
  for (int i = 0; i < 50; ++i) CHECK(big.excitatory[i] == (i < 40));
  for (const auto& e : big.graph.edges()) {
    CHECK(e.src != e.dst);
    double w = big.signed_incoming()(e.dst, e.src);
    CHECK((big.excitatory[e.src] ? w > 0 : w < 0));
  }
}

TEST_CASE("Wilson-Cowan uncoupled decay") {
  WilsonCowanConfig c = wc_base(3, 0.0, 1);
  c.tau = Eigen::Vector3d(1.0, 2.0, 0.5);
  c.dt = 0.005;
  c.steps = 400;
  c.initial = Eigen::Vector3d(0.4, -0.3, 0.2);
  auto ds = simulate_wilson_cowan(c);
  const auto& s = ds.series[0];
  for (std::size_t t = 0; t < s.length(); ++t)
    for (int i = 0; i < 3; ++i)
      CHECK(s.values()(t, i) == doctest::Approx(c.initial(i) * std::exp(-s.times()[t] / c.tau(i))).epsilon(1e-9));
}

TEST_CASE("Wilson-Cowan rests at a numerically found fixed point") {
  WilsonCowanConfig c = wc_base(4, 0.6, 3);
  c.coupling_scale = 2.0;
  c.theta = Eigen::Vector4d(0.1, -0.05, 0.0, 0.02);
  // Independent right-hand side for the root finder.
  const Eigen::MatrixXd W = c.network.signed_incoming() * c.coupling_scale;
  auto rhs = [&](const Eigen::VectorXd& r) {
    Eigen::ArrayXd s = 1.0 / (1.0 + (-(W * r).array()).exp()) - 0.5;
    return Eigen::VectorXd(s - c.theta.array() - r.array());
  };
  c.initial = newton(rhs, Eigen::VectorXd::Constant(4, 0.1));
  REQUIRE(rhs(c.initial).norm() < 1e-12);
  auto ds = simulate_wilson_cowan(c);
  for (std::size_t t = 0; t < ds.series[0].length(); ++t)
    CHECK((ds.series[0].values().row(t).transpose() - c.initial).norm() < 1e-10);
}

TEST_CASE("Wilson-Cowan RK4 converges at fourth order") {
  WilsonCowanConfig c = wc_base(4, 0.8, 7);
  c.coupling_scale = 4.0;
  c.steepness = 3.0;
  c.initial = Eigen::Vector4d(0.5, -0.4, 0.3, 0.45);
  auto end_state = [&](double dt) {
    WilsonCowanConfig k = c;
    k.dt = dt;
    k.steps = static_cast<int>(std::lround(1.0 / dt));
    k.sample_every = k.steps;
    auto ds = simulate_wilson_cowan(k);
    return Eigen::VectorXd(ds.series[0].values().bottomRows(1).transpose());
  };
  const double h = 0.1;
  Eigen::VectorXd ref = end_state(h / 64);
  double e1 = (end_state(h) - ref).norm();
  double e2 = (end_state(h / 2) - ref).norm();
  REQUIRE(e2 > 0.0);
  CHECK(e1 / e2 >= 8.0);
  CHECK(e1 / e2 <= 32.0);
}

TEST_CASE("Wilson-Cowan decoupled vertices are independent") {
  WilsonCowanConfig c = wc_base(2, 0.0, 1);
  c.initial = Eigen::Vector2d(0.3, 0.1);
  auto a = simulate_wilson_cowan(c);
  c.initial(1) = 0.45;
  auto b = simulate_wilson_cowan(c);
  CHECK(a.series[0].values().col(0) == b.series[0].values().col(0));
  CHECK(a.series[0].values().col(1) != b.series[0].values().col(1));
}

TEST_CASE("Wilson-Cowan rejects coarse steps") {
  WilsonCowanConfig c = wc_base(2, 0.0, 1);
  c.dt = 0.2;
  CHECK_THROWS_AS(simulate_wilson_cowan(c), ValidationError);
}

TEST_CASE("IAF resting state") {
  IafConfig c;
  c.network = random_network(3, 0.0, 0.8, 1);
  c.duration = 100.0;
  auto run = run_iaf(c);
  CHECK((run.potential.values().array() == c.neuron.E_L).all());
  for (const auto& s : run.spikes) CHECK(s.empty());
  CHECK(run.rates.values().isZero(0.0));
}

TEST_CASE("IAF subthreshold steady state") {
  IafConfig c;
  c.network = random_network(2, 0.0, 0.8, 1);
  c.neuron.I_e = 2500.0;
  c.duration = 300.0;
  auto run = run_iaf(c);
  const double target = c.neuron.E_L + c.neuron.I_e / c.neuron.C_m;
  REQUIRE(target < c.neuron.V_th);
  for (int i = 0; i < 2; ++i) {
    CHECK(run.potential.values().bottomRows(1)(0, i) == doctest::Approx(target).epsilon(1e-9));
    CHECK(run.spikes[i].empty());
  }
}

TEST_CASE("IAF rejects coarse steps unless allowed") {
  IafConfig c;
  c.network = random_network(2, 0.0, 0.8, 1);
  c.dt = 0.2;
  c.duration = 10.0;
  CHECK_THROWS_AS(run_iaf(c), ValidationError);
  c.allow_coarse_step = true;
  CHECK_NOTHROW(run_iaf(c));
}

TEST_CASE("IAF perturbation leaves non-descendants unchanged") {
  IafConfig c;
  c.network.graph = graph::WeightedDigraph(3, {{0, 1, 1.0}});
  c.network.excitatory = {true, true, true};
  c.neuron.I_e = 4000.0;
  c.noise_current = 200.0;
  c.duration = 300.0;
  c.seed = 4;
  data::PerturbationRecord p{0, 100.0, -3.0, "V_th"};
  auto base = run_iaf(c);
  auto pert = run_iaf(c, &p);
  CHECK(base.potential.values().col(2) == pert.potential.values().col(2));
  CHECK(base.spikes[2] == pert.spikes[2]);
  CHECK(base.spikes[0] != pert.spikes[0]);
  CHECK(base.potential.values().col(1) != pert.potential.values().col(1));
  CHECK(base.potential.values().topRows(20) == pert.potential.values().topRows(20));
}

TEST_CASE("DMF transfer limit") {
  const double a = 270, b = 108, d = 0.154;
  CHECK(dmf_transfer(b / a, a, b, d) == doctest::Approx(1.0 / d).epsilon(1e-12));
  for (double u : {1e-4, -1e-4, 1e-8, -1e-8}) {
    double x = (b + u) / a;
    double direct = u / (1.0 - std::exp(-d * u));
    CHECK(dmf_transfer(x, a, b, d) == doctest::Approx(direct).epsilon(1e-6));
  }
  CHECK(DmfConfig{}.w == 0.9);
}

TEST_CASE("DMF rests at a numerically found equilibrium") {
  DmfConfig c;
  c.coupling = random_network(4, 0.5, 1.0, 9).graph.incoming();
  c.sigma = 0.0;
  c.steps = 500;
  auto drift = [&](const Eigen::VectorXd& S) {
    Eigen::VectorXd out(S.size());
    Eigen::VectorXd x = c.w * c.J_N * S - c.G * c.J_N * (c.coupling * S);
    for (int i = 0; i < S.size(); ++i) {
      double u = c.a * (x(i) + c.I_o) - c.b;
      double H = std::abs(u) < 1e-12 ? 1.0 / c.d : u / (1.0 - std::exp(-c.d * u));
      out(i) = -S(i) / c.tau_s + c.gamma * (1.0 - S(i)) * H;
    }
    return out;
  };
  c.initial = newton(drift, Eigen::VectorXd::Constant(4, 0.2));
  REQUIRE(drift(c.initial).norm() < 1e-9);
  auto ds = simulate_dmf(c);
  for (std::size_t t = 0; t < ds.series[0].length(); ++t)
    CHECK((ds.series[0].values().row(t).transpose() - c.initial).norm() < 1e-9);
  CHECK(ds.ground_truth->edge_count() == random_network(4, 0.5, 1.0, 9).graph.edge_count());
}

TEST_CASE("simulators are deterministic") {
  WilsonCowanConfig w = wc_base(5, 0.3, 2);
  w.noise_sigma = 0.05;
  w.seed = 8;
  CHECK(simulate_wilson_cowan(w).series[0].values() == simulate_wilson_cowan(w).series[0].values());
  IafConfig i;
  i.network = random_network(5, 0.3, 0.8, 2);
  i.neuron.I_e = 400.0;
  i.noise_current = 100.0;
  i.duration = 100.0;
  CHECK(simulate_iaf_network(i).series[0].values() == simulate_iaf_network(i).series[0].values());
  DmfConfig d;
  d.coupling = random_network(5, 0.3, 1.0, 2).graph.incoming();
  d.steps = 200;
  CHECK(simulate_dmf(d).series[0].values() == simulate_dmf(d).series[0].values());
}

}
