#include "ritini/simulators.hpp"

#include <fmt/format.h>

#include <cmath>
#include <numbers>
#include <random>

namespace ritini::sim {

namespace {

using data::Dataset;
using data::MultivariateTimeSeries;
using data::PerturbationRecord;

std::vector<double> grid(std::size_t count, double step) {
  std::vector<double> t(count);
  for (std::size_t k = 0; k < count; ++k) t[k] = static_cast<double>(k) * step;
  return t;
}

// Grid row at which a record fires; throws when it falls between samples.
std::size_t record_row(const PerturbationRecord& p, double step, std::size_t rows, int n) {
  if (p.vertex < 0 || p.vertex >= n) throw ValidationError(fmt::format("perturbation vertex {} out of range [0, {})", p.vertex, n));
  const double k = p.time / step;
  const double r = std::round(k);
  if (r < 0 || std::abs(k - r) > 1e-9 * std::max(1.0, std::abs(k)) || r >= static_cast<double>(rows)) {
    throw AlignmentError(fmt::format("perturbation time {} is not on the output grid", p.time));
  }
  return static_cast<std::size_t>(r);
}

Dataset assemble(std::vector<MultivariateTimeSeries> series, const std::vector<PerturbationRecord>& records,
                 graph::WeightedDigraph truth) {
  Dataset ds;
  ds.series = std::move(series);
  for (std::size_t k = 0; k < records.size(); ++k) ds.perturbations[k + 1] = {records[k]};
  ds.ground_truth = std::move(truth);
  ds.validate();
  return ds;
}

graph::WeightedDigraph support_of(const Eigen::MatrixXd& incoming) {
  graph::WeightedDigraph g(static_cast<int>(incoming.rows()));
  for (Eigen::Index i = 0; i < incoming.rows(); ++i) {
    for (Eigen::Index j = 0; j < incoming.cols(); ++j) {
      if (i != j && incoming(i, j) != 0.0) g.set_edge(static_cast<int>(j), static_cast<int>(i), 1.0);
    }
  }
  return g;
}

graph::WeightedDigraph unit_weights(const graph::WeightedDigraph& g) {
  graph::WeightedDigraph out(g.n());
  for (const auto& e : g.edges()) {
    if (e.src != e.dst) out.set_edge(e.src, e.dst, 1.0);
  }
  return out;
}

}  // namespace

Eigen::MatrixXd LabeledNetwork::signed_incoming() const {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n(), n());
  for (const auto& e : graph.edges()) w(e.dst, e.src) = excitatory[static_cast<std::size_t>(e.src)] ? e.weight : -e.weight;
  return w;
}

int LabeledNetwork::excitatory_count() const {
  int c = 0;
  for (bool e : excitatory) c += e ? 1 : 0;
  return c;
}

LabeledNetwork random_network(int n, double edge_probability, double fraction_excitatory, std::uint64_t seed) {
  if (n < 0) throw ValidationError("network size must be nonnegative");
  if (!(edge_probability >= 0.0 && edge_probability <= 1.0)) {
    throw ValidationError(fmt::format("edge probability {} outside [0, 1]", edge_probability));
  }
  if (!(fraction_excitatory >= 0.0 && fraction_excitatory <= 1.0)) {
    throw ValidationError(fmt::format("excitatory fraction {} outside [0, 1]", fraction_excitatory));
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LabeledNetwork net{graph::WeightedDigraph(n), std::vector<bool>(static_cast<std::size_t>(n), false)};
  const int n_exc = static_cast<int>(std::ceil(fraction_excitatory * n - 1e-9));
  for (int i = 0; i < n_exc; ++i) net.excitatory[static_cast<std::size_t>(i)] = true;
  for (int s = 0; s < n; ++s) {
    for (int d = 0; d < n; ++d) {
      if (s == d) continue;
      if (u(rng) < edge_probability) net.graph.set_edge(s, d, 1.0);
    }
  }
  return net;
}

graph::WeightedDigraph five_node_ground_truth() {
  return graph::WeightedDigraph(5, {{0, 1, 1.0}, {0, 2, 1.0}, {0, 3, 1.0}, {3, 4, 1.0}, {4, 3, 1.0}});
}

data::Dataset simulate_five_node(const FiveNodeConfig& config) {
  constexpr int n = 5;
  constexpr int warmup = 3;
  if (config.steps < 4) throw ValidationError(fmt::format("five-node system needs at least 4 steps, got {}", config.steps));
  if (!(config.noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be nonnegative");
  if (!config.initial.empty() && config.initial.size() != n) throw ValidationError("initial values must list x1..x5");

  std::mt19937_64 rng(config.seed);
  const auto T = static_cast<Eigen::Index>(config.steps);
  Eigen::MatrixXd start(warmup, n);
  if (config.initial.empty()) {
    start.setZero();
  } else {
    for (Eigen::Index r = 0; r < warmup; ++r)
      for (int v = 0; v < n; ++v) start(r, v) = config.initial[static_cast<std::size_t>(v)];
  }
  Eigen::MatrixXd noise = Eigen::MatrixXd::Zero(T, n);
  if (config.noise_sigma > 0.0) {
    std::normal_distribution<double> g(0.0, config.noise_sigma);
    for (Eigen::Index t = warmup; t < T; ++t)
      for (int v = 0; v < n; ++v) noise(t, v) = g(rng);
  }

  const double r2 = std::numbers::sqrt2;
  const double keep = config.increment_form ? 1.0 : 0.0;
  auto run = [&](const PerturbationRecord* p) {
    const auto prow = p ? static_cast<Eigen::Index>(record_row(*p, 1.0, static_cast<std::size_t>(T), n)) : T;
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(T, n);
    x.topRows(warmup) = start;
    if (prow < warmup) x(prow, p->vertex) += p->epsilon;
    for (Eigen::Index t = warmup; t < T; ++t) {
      auto lag = [&](int v, int l) { return x(t - l, v); };
      x(t, 0) = keep * lag(0, 1) + 0.95 * r2 * lag(0, 1) - 0.9025 * lag(0, 2);
      x(t, 1) = keep * lag(1, 1) + 0.5 * lag(0, 2) * lag(0, 2);
      x(t, 2) = keep * lag(2, 1) - 0.4 * lag(0, 3);
      x(t, 3) = keep * lag(3, 1) - 0.5 * lag(0, 2) * lag(0, 2) + 0.5 * r2 * lag(3, 1) + 0.25 * r2 * lag(4, 1);
      x(t, 4) = keep * lag(4, 1) - 0.5 * r2 * lag(3, 1) + 0.5 * r2 * lag(4, 1);
      x.row(t) += noise.row(t);
      if (t == prow) x(t, p->vertex) += p->epsilon;
      if (!x.row(t).allFinite()) throw BlowUpError(fmt::format("five-node state is not finite at step {}", t));
    }
    return MultivariateTimeSeries(grid(static_cast<std::size_t>(T), 1.0), std::move(x));
  };

  std::vector<MultivariateTimeSeries> series{run(nullptr)};
  for (const auto& p : config.perturbations) series.push_back(run(&p));
  return assemble(std::move(series), config.perturbations, five_node_ground_truth());
}

namespace {

void fill_defaults(const WilsonCowanConfig& c, Eigen::VectorXd& alpha, Eigen::VectorXd& theta, Eigen::VectorXd& tau) {
  const int n = c.network.n();
  alpha = c.alpha.size() == 0 ? Eigen::VectorXd::Ones(n) : c.alpha;
  theta = c.theta.size() == 0 ? Eigen::VectorXd::Zero(n) : c.theta;
  tau = c.tau.size() == 0 ? Eigen::VectorXd::Ones(n) : c.tau;
  if (alpha.size() != n || theta.size() != n || tau.size() != n) {
    throw SizeMismatchError("Wilson-Cowan per-vertex parameters must have one entry per vertex");
  }
}

}  // namespace

Eigen::VectorXd wilson_cowan_rhs(const WilsonCowanConfig& c, const Eigen::VectorXd& r) {
  Eigen::VectorXd alpha, theta, tau;
  fill_defaults(c, alpha, theta, tau);
  const Eigen::VectorXd input = c.coupling_scale * (c.network.signed_incoming() * r);
  const Eigen::ArrayXd s = 1.0 / (1.0 + (-c.steepness * input.array()).exp()) - 0.5;
  return ((alpha.array() * s - theta.array() - r.array()) / tau.array()).matrix();
}

data::Dataset simulate_wilson_cowan(const WilsonCowanConfig& c) {
  const int n = c.network.n();
  Eigen::VectorXd alpha, theta, tau;
  fill_defaults(c, alpha, theta, tau);
  if ((tau.array() <= 0.0).any()) throw ValidationError("Wilson-Cowan time constants must be positive");
  if (!(c.dt > 0.0) || c.dt > tau.minCoeff() / 10.0 + 1e-15) {
    throw ValidationError(fmt::format("step {} must be positive and at most min(tau)/10 = {}", c.dt, tau.minCoeff() / 10.0));
  }
  if (c.steps < 1 || c.sample_every < 1) throw ValidationError("steps and sample_every must be positive");
  if (!(c.noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be nonnegative");

  std::mt19937_64 rng(c.seed);
  Eigen::VectorXd r0 = c.initial;
  if (r0.size() == 0) {
    std::uniform_real_distribution<double> u(0.0, 0.5);
    r0.resize(n);
    for (int i = 0; i < n; ++i) r0(i) = u(rng);
  }
  if (r0.size() != n) throw SizeMismatchError("initial state must have one entry per vertex");
  Eigen::MatrixXd noise;
  if (c.noise_sigma > 0.0) {
    std::normal_distribution<double> g(0.0, 1.0);
    noise.resize(c.steps, n);
    for (int k = 0; k < c.steps; ++k)
      for (int i = 0; i < n; ++i) noise(k, i) = g(rng);
  }

  const std::size_t rows = static_cast<std::size_t>(c.steps / c.sample_every) + 1;
  const double sample_dt = c.dt * c.sample_every;
  auto f = [&](const Eigen::VectorXd& r) { return wilson_cowan_rhs(c, r); };
  auto run = [&](const PerturbationRecord* p) {
    const std::size_t prow = p ? record_row(*p, sample_dt, rows, n) : rows;
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows), n);
    Eigen::VectorXd r = r0;
    if (prow == 0) r(p->vertex) += p->epsilon;
    out.row(0) = r.transpose();
    for (int k = 0; k < c.steps; ++k) {
      const Eigen::VectorXd k1 = f(r);
      const Eigen::VectorXd k2 = f(r + 0.5 * c.dt * k1);
      const Eigen::VectorXd k3 = f(r + 0.5 * c.dt * k2);
      const Eigen::VectorXd k4 = f(r + c.dt * k3);
      r += c.dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (c.noise_sigma > 0.0) r += c.noise_sigma * std::sqrt(c.dt) * noise.row(k).transpose();
      if (!r.allFinite()) throw BlowUpError(fmt::format("Wilson-Cowan state is not finite at step {}", k + 1));
      if ((k + 1) % c.sample_every == 0) {
        const std::size_t row = static_cast<std::size_t>((k + 1) / c.sample_every);
        if (row == prow) r(p->vertex) += p->epsilon;
        out.row(static_cast<Eigen::Index>(row)) = r.transpose();
      }
    }
    return MultivariateTimeSeries(grid(rows, sample_dt), std::move(out));
  };

  std::vector<MultivariateTimeSeries> series{run(nullptr)};
  for (const auto& p : c.perturbations) series.push_back(run(&p));
  return assemble(std::move(series), c.perturbations, unit_weights(c.network.graph));
}

IafRun run_iaf(const IafConfig& c, const data::PerturbationRecord* p) {
  const int n = c.network.n();
  if (!(c.dt > 0.0)) throw ValidationError("IAF step must be positive");
  if (c.dt > 0.1 + 1e-12 && !c.allow_coarse_step) throw ValidationError(fmt::format("IAF step {} ms exceeds the 0.1 ms resolution", c.dt));
  if (!(c.duration > 0.0) || !(c.record_interval >= c.dt) || !(c.rate_kernel_width > 0.0)) {
    throw ValidationError("IAF duration, record interval and kernel width must be positive");
  }
  std::vector<IafNeuron> par = c.neurons.empty() ? std::vector<IafNeuron>(static_cast<std::size_t>(n), c.neuron) : c.neurons;
  if (static_cast<int>(par.size()) != n) throw SizeMismatchError("need one parameter set per neuron");
  for (const auto& q : par) {
    if (!(q.V_reset < q.V_th)) throw ValidationError("V_reset must be below V_th");
    if (!(q.tau_m > 0.0) || !(q.C_m > 0.0) || !(q.tau_syn_ex > 0.0) || !(q.tau_syn_in > 0.0)) {
      throw ValidationError("IAF time constants and capacitance must be positive");
    }
  }

  const auto steps = static_cast<long>(std::llround(c.duration / c.dt));
  const auto every = static_cast<long>(std::llround(c.record_interval / c.dt));
  const std::size_t rows = static_cast<std::size_t>(steps / every) + 1;
  const double sample_dt = c.record_interval;
  long pstep = -1;
  if (p != nullptr) {
    pstep = static_cast<long>(record_row(*p, sample_dt, rows, n)) * every;
    const auto& name = p->parameter;
    if (!name.empty() && name != "V_th" && name != "E_L" && name != "C_m" && name != "t_ref") {
      throw ValidationError(fmt::format("unknown IAF perturbation parameter '{}'", name));
    }
  }

  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> g(0.0, 1.0);
  const Eigen::MatrixXd w = c.network.signed_incoming();
  Eigen::VectorXd V(n), Iex = Eigen::VectorXd::Zero(n), Yex = Eigen::VectorXd::Zero(n), Iin = Eigen::VectorXd::Zero(n),
      Yin = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) V(i) = par[static_cast<std::size_t>(i)].V_m;
  std::vector<long> refractory(static_cast<std::size_t>(n), 0);
  std::vector<int> fired;
  IafRun out;
  out.spikes.assign(static_cast<std::size_t>(n), {});
  Eigen::MatrixXd potential(static_cast<Eigen::Index>(rows), n);
  potential.row(0) = V.transpose();

  for (long k = 0; k < steps; ++k) {
    if (k == pstep) {
      auto& q = par[static_cast<std::size_t>(p->vertex)];
      if (p->parameter.empty()) V(p->vertex) += p->epsilon;
      else if (p->parameter == "V_th") q.V_th += p->epsilon;
      else if (p->parameter == "E_L") q.E_L += p->epsilon;
      else if (p->parameter == "C_m") q.C_m += p->epsilon;
      else q.t_ref += p->epsilon;
      if (!(q.C_m > 0.0) || !(q.t_ref >= 0.0)) throw ValidationError("perturbation leaves an invalid IAF parameter");
    }
    // Spikes from the previous step arrive now (one-step delay).
    for (int s : fired) {
      for (int i = 0; i < n; ++i) {
        const double ws = w(i, s);
        if (ws > 0.0) Yex(i) += ws * c.weight_ex * std::numbers::e / par[static_cast<std::size_t>(i)].tau_syn_ex;
        else if (ws < 0.0) Yin(i) += ws * c.weight_in * std::numbers::e / par[static_cast<std::size_t>(i)].tau_syn_in;
      }
    }
    fired.clear();
    const double t_next = static_cast<double>(k + 1) * c.dt;
    for (int i = 0; i < n; ++i) {
      auto& q = par[static_cast<std::size_t>(i)];
      const double noise = c.noise_current > 0.0 ? c.noise_current * g(rng) : 0.0;
      const double current = q.I_e + Iex(i) + Iin(i) + noise;
      if (refractory[static_cast<std::size_t>(i)] > 0) {
        --refractory[static_cast<std::size_t>(i)];
        V(i) = q.V_reset;
      } else {
        V(i) += c.dt / q.tau_m * (-(V(i) - q.E_L) + current / q.C_m);
        V(i) = std::max(V(i), q.V_min);
        if (V(i) >= q.V_th) {
          out.spikes[static_cast<std::size_t>(i)].push_back(t_next);
          fired.push_back(i);
          V(i) = q.V_reset;
          refractory[static_cast<std::size_t>(i)] = static_cast<long>(std::llround(q.t_ref / c.dt));
        }
      }
      if (!std::isfinite(V(i))) throw BlowUpError(fmt::format("membrane potential of neuron {} is not finite at step {}", i, k + 1));
      // Exact propagation of the alpha-kernel state over one step.
      const double dex = std::exp(-c.dt / q.tau_syn_ex);
      const double din = std::exp(-c.dt / q.tau_syn_in);
      Iex(i) = dex * (Iex(i) + c.dt * Yex(i));
      Yex(i) *= dex;
      Iin(i) = din * (Iin(i) + c.dt * Yin(i));
      Yin(i) *= din;
    }
    if ((k + 1) % every == 0) potential.row(static_cast<Eigen::Index>((k + 1) / every)) = V.transpose();
  }

  const std::vector<double> times = grid(rows, sample_dt);
  Eigen::MatrixXd rates = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), n);
  const double sw = c.rate_kernel_width;
  const double norm = 1000.0 / (std::sqrt(2.0 * std::numbers::pi) * sw);
  for (int i = 0; i < n; ++i) {
    for (double ts : out.spikes[static_cast<std::size_t>(i)]) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double z = (times[r] - ts) / sw;
        if (std::abs(z) < 8.0) rates(static_cast<Eigen::Index>(r), i) += norm * std::exp(-0.5 * z * z);
      }
    }
  }
  out.rates = MultivariateTimeSeries(times, std::move(rates));
  out.potential = MultivariateTimeSeries(times, std::move(potential));
  return out;
}

data::Dataset simulate_iaf_network(const IafConfig& c) {
  std::vector<MultivariateTimeSeries> series{run_iaf(c).rates};
  for (const auto& p : c.perturbations) series.push_back(run_iaf(c, &p).rates);
  return assemble(std::move(series), c.perturbations, unit_weights(c.network.graph));
}

double dmf_transfer(double x, double a, double b, double d) {
  const double u = a * x - b;
  if (std::abs(d * u) < 1e-9) return 1.0 / d + u / 2.0;
  return u / (1.0 - std::exp(-d * u));
}

Eigen::VectorXd dmf_drift(const DmfConfig& c, const Eigen::VectorXd& S) {
  const Eigen::VectorXd x = c.w * c.J_N * S - c.G * c.J_N * (c.coupling * S) + Eigen::VectorXd::Constant(S.size(), c.I_o);
  Eigen::VectorXd out(S.size());
  for (Eigen::Index i = 0; i < S.size(); ++i) {
    out(i) = -S(i) / c.tau_s + c.gamma * (1.0 - S(i)) * dmf_transfer(x(i), c.a, c.b, c.d);
  }
  return out;
}

data::Dataset simulate_dmf(const DmfConfig& c) {
  const auto n = static_cast<int>(c.coupling.rows());
  if (c.coupling.cols() != n) throw SizeMismatchError("DMF coupling must be square");
  if ((c.coupling.array() < 0.0).any()) throw ValidationError("DMF coupling entries must be nonnegative");
  if (!(c.tau_s > 0.0) || !(c.dt > 0.0) || !(c.sigma >= 0.0)) throw ValidationError("DMF needs tau_s > 0, dt > 0, sigma >= 0");
  if (c.steps < 1 || c.sample_every < 1) throw ValidationError("steps and sample_every must be positive");

  std::mt19937_64 rng(c.seed);
  Eigen::VectorXd s0 = c.initial;
  if (s0.size() == 0) {
    std::uniform_real_distribution<double> u(0.0, 0.2);
    s0.resize(n);
    for (int i = 0; i < n; ++i) s0(i) = u(rng);
  }
  if (s0.size() != n) throw SizeMismatchError("initial state must have one entry per area");
  Eigen::MatrixXd noise;
  if (c.sigma > 0.0) {
    std::normal_distribution<double> g(0.0, 1.0);
    noise.resize(c.steps, n);
    for (int k = 0; k < c.steps; ++k)
      for (int i = 0; i < n; ++i) noise(k, i) = g(rng);
  }

  const std::size_t rows = static_cast<std::size_t>(c.steps / c.sample_every) + 1;
  const double sample_dt = c.dt * c.sample_every;
  auto run = [&](const PerturbationRecord* p) {
    const std::size_t prow = p ? record_row(*p, sample_dt, rows, n) : rows;
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows), n);
    Eigen::VectorXd S = s0;
    if (prow == 0) S(p->vertex) += p->epsilon;
    out.row(0) = S.transpose();
    for (int k = 0; k < c.steps; ++k) {
      S += c.dt * dmf_drift(c, S);
      if (c.sigma > 0.0) S += c.sigma * std::sqrt(c.dt) * noise.row(k).transpose();
      if (!S.allFinite()) throw BlowUpError(fmt::format("DMF state is not finite at step {}", k + 1));
      if ((k + 1) % c.sample_every == 0) {
        const std::size_t row = static_cast<std::size_t>((k + 1) / c.sample_every);
        if (row == prow) S(p->vertex) += p->epsilon;
        out.row(static_cast<Eigen::Index>(row)) = S.transpose();
      }
    }
    return MultivariateTimeSeries(grid(rows, sample_dt), std::move(out));
  };

  std::vector<MultivariateTimeSeries> series{run(nullptr)};
  for (const auto& p : c.perturbations) series.push_back(run(&p));
  return assemble(std::move(series), c.perturbations, support_of(c.coupling));
}

}  // namespace ritini::sim
