#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "ritini/dataset.hpp"
#include "ritini/graph.hpp"

// Ground-truth dynamical systems. Every simulator returns a Dataset whose
// series[0] is the unperturbed run and whose series[k] (k >= 1) repeats the
// run with perturbations[k-1] injected. All runs of one call draw the same
// noise sequence, so replicates differ only through the injection.
namespace ritini::sim {

/// Random directed network with excitatory/inhibitory vertex labels.
/// Edge weights are magnitudes; the sign of an edge is its source's label.
struct LabeledNetwork {
  graph::WeightedDigraph graph;
  std::vector<bool> excitatory;

  int n() const { return graph.n(); }
  /// Dense signed coupling in attention orientation: W(dst, src) = +-weight.
  Eigen::MatrixXd signed_incoming() const;
  int excitatory_count() const;
};

LabeledNetwork random_network(int n, double edge_probability, double fraction_excitatory, std::uint64_t seed);

struct FiveNodeConfig {
  int steps = 500;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;
  /// x1..x5 for the three warm-up rows. Empty: zeros, so the noise drives the system.
  std::vector<double> initial;
  std::vector<data::PerturbationRecord> perturbations;
  /// Literal x(t+1) = x(t) + RHS reading. Its x1 recurrence is explosive.
  bool increment_form = false;
};

data::Dataset simulate_five_node(const FiveNodeConfig& config);
graph::WeightedDigraph five_node_ground_truth();

struct WilsonCowanConfig {
  LabeledNetwork network;
  double coupling_scale = 1.0;
  /// Per-vertex gains, thresholds and time constants. Empty: 1, 0, 1.
  Eigen::VectorXd alpha;
  Eigen::VectorXd theta;
  Eigen::VectorXd tau;
  /// Steepness a of S(x) = 1 / (1 + exp(-a x)) - 1/2.
  double steepness = 1.0;
  int steps = 1000;
  double dt = 0.01;
  int sample_every = 10;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  /// Empty: drawn uniformly from [0, 0.5].
  Eigen::VectorXd initial;
  std::vector<data::PerturbationRecord> perturbations;
};

data::Dataset simulate_wilson_cowan(const WilsonCowanConfig& config);
/// Right-hand side dr/dt of the network model at state r.
Eigen::VectorXd wilson_cowan_rhs(const WilsonCowanConfig& config, const Eigen::VectorXd& r);

/// Neuron parameters, NEST iaf_psc_alpha defaults (mV, pF, ms, pA).
struct IafNeuron {
  double V_m = -70.0;
  double E_L = -70.0;
  double C_m = 250.0;
  double tau_m = 10.0;
  double t_ref = 2.0;
  double V_th = -55.0;
  double V_reset = -70.0;
  double tau_syn_ex = 2.0;
  double tau_syn_in = 2.0;
  double I_e = 0.0;
  double V_min = -1e300;
};

struct IafConfig {
  LabeledNetwork network;
  /// One entry per neuron, or empty to use `neuron` for all.
  std::vector<IafNeuron> neurons;
  IafNeuron neuron;
  /// Peak synaptic current per spike (pA); inhibitory sources use -weight_in.
  double weight_ex = 1000.0;
  double weight_in = 4000.0;
  /// Standard deviation of a white background current (pA) redrawn every step.
  double noise_current = 0.0;
  double duration = 1000.0;
  double dt = 0.1;
  double record_interval = 5.0;
  double rate_kernel_width = 20.0;
  std::uint64_t seed = 0;
  /// Records with `parameter` in {V_th, E_L, C_m, t_ref} shift that
  /// parameter from `time` onward; an empty parameter shifts V_m once.
  std::vector<data::PerturbationRecord> perturbations;
  bool allow_coarse_step = false;
};

struct IafRun {
  data::MultivariateTimeSeries rates;      // Hz, smoothed
  data::MultivariateTimeSeries potential;  // mV, at record times
  std::vector<std::vector<double>> spikes; // spike times per neuron
};

data::Dataset simulate_iaf_network(const IafConfig& config);
/// Single run with an optional injection, exposing spikes and potentials.
IafRun run_iaf(const IafConfig& config, const data::PerturbationRecord* perturbation = nullptr);

struct DmfConfig {
  /// C(i, j) >= 0 couples area j into area i.
  Eigen::MatrixXd coupling;
  double tau_s = 0.1;
  double gamma = 0.641;
  double sigma = 0.001;
  double a = 270.0;
  double b = 108.0;
  double d = 0.154;
  double w = 0.9;
  double G = 0.5;
  double J_N = 0.2609;
  double I_o = 0.3;
  int steps = 2000;
  double dt = 0.001;
  int sample_every = 10;
  std::uint64_t seed = 0;
  /// Empty: drawn uniformly from [0, 0.2].
  Eigen::VectorXd initial;
  std::vector<data::PerturbationRecord> perturbations;
};

/// H(x) = (a x - b) / (1 - exp(-d (a x - b))), continuous at a x = b.
double dmf_transfer(double x, double a, double b, double d);
/// Deterministic part of dS/dt.
Eigen::VectorXd dmf_drift(const DmfConfig& config, const Eigen::VectorXd& S);
data::Dataset simulate_dmf(const DmfConfig& config);

}  // namespace ritini::sim
