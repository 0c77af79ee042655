#include "ritini/model.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

namespace ritini::model {

namespace {

const char* const kNames[] = {"projection", "temporal_logits", "att_w1", "att_b1", "att_w2",
                              "dyn_w1",     "dyn_wt",          "dyn_b1", "dyn_w2", "dyn_b2"};

void check_config(const ModelConfig& c) {
  if (c.lags < 1) throw ConfigError(fmt::format("lag count must be at least 1, got {}", c.lags));
  if (c.hidden < 1) throw ConfigError(fmt::format("hidden width must be at least 1, got {}", c.hidden));
}

BoundParameters bind(ad::Tape& tape, const ModelParameters& params, bool as_leaves) {
  BoundParameters b;
  b.config = params.config();
  std::vector<Var> v;
  for (const char* name : kNames) {
    const Matrix& m = params.get(name);
    v.push_back(as_leaves ? tape.leaf(m) : tape.constant(m));
  }
  b.projection = v[0];
  b.temporal_logits = v[1];
  b.att_w1 = v[2];
  b.att_b1 = v[3];
  b.att_w2 = v[4];
  b.dyn_w1 = v[5];
  b.dyn_wt = v[6];
  b.dyn_b1 = v[7];
  b.dyn_w2 = v[8];
  b.dyn_b2 = v[9];
  b.leaves = std::move(v);
  return b;
}

Mask tile(const Mask& support, int times) {
  const auto n = support.rows();
  Mask out(n * times, support.cols());
  for (int k = 0; k < times; ++k) out.middleRows(k * n, n) = support;
  return out;
}

// Training-point history of one series in model units.
HistoryBuffer training_history(const Eigen::MatrixXd& z, const std::vector<double>& times, const std::vector<std::size_t>& train,
                               std::size_t up_to_index) {
  HistoryBuffer h(static_cast<int>(z.cols()));
  for (std::size_t idx : train) {
    if (idx > up_to_index) break;
    h.push(times[idx], z.row(static_cast<Eigen::Index>(idx)));
  }
  return h;
}

constexpr double kStage[4] = {0.0, 0.5, 0.5, 1.0};

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t k = 0; k < n; ++k) v[k] = k;
  return v;
}

// One interval of the sequential rollout: attention from the buffer window at
// t, then RK4 substeps whose outputs are appended to the buffer.
Eigen::VectorXd rollout_interval(const TrainedModel& model, HistoryBuffer& buffer, const Eigen::VectorXd& x, double t,
                                 double fraction) {
  const int L = model.params.config().lags;
  const double dt = model.dt;
  const Eigen::MatrixXd A = compute_attention(model.params, buffer.window(t, L, dt), model.support());
  auto rhs = [&](double s, const Eigen::VectorXd& state) -> Eigen::VectorXd {
    Eigen::MatrixXd window(L, state.size());
    window.row(0) = state.transpose();
    for (int d = 1; d < L; ++d) window.row(d) = buffer.at(s - d * dt);
    return ode_rhs(model.params, A, window, model.normalized_time(s)) / dt;
  };
  const int steps = std::max(1, static_cast<int>(std::ceil(model.config.solver_steps * fraction - 1e-9)));
  auto out = ode_solve(rhs, x, t, t + fraction * dt, steps,
                       [&](double s, const Eigen::VectorXd& state) { buffer.push(s, state.transpose()); });
  return out.back();
}

}  // namespace

ModelParameters::ModelParameters(const ModelConfig& config, std::uint64_t seed, double init_scale) : config_(config) {
  check_config(config);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-init_scale, init_scale);
  auto draw = [&](Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = u(rng);
    return m;
  };
  const int d = config.hidden;
  const int L = config.lags;
  store_.add("projection", draw(d, 1));
  store_.add("temporal_logits", draw(1, L));
  store_.add("att_w1", draw(2 * L, d));
  store_.add("att_b1", draw(1, d));
  store_.add("att_w2", draw(d, 1));
  store_.add("dyn_w1", draw(d, d));
  store_.add("dyn_wt", draw(1, d));
  store_.add("dyn_b1", draw(1, d));
  store_.add("dyn_w2", draw(d, 1));
  store_.add("dyn_b2", draw(1, 1));
}

Eigen::VectorXd ModelParameters::temporal_attention() const {
  const Eigen::RowVectorXd z = get("temporal_logits").row(0);
  Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp().transpose();
  return e / e.sum();
}

nlohmann::json ModelParameters::to_json() const {
  return {{"lags", config_.lags}, {"hidden", config_.hidden}, {"arrays", store_.to_json()}};
}

ModelParameters ModelParameters::from_json(const nlohmann::json& j) {
  ModelParameters p;
  try {
    p.config_.lags = j.at("lags").get<int>();
    p.config_.hidden = j.at("hidden").get<int>();
    p.store_ = ad::ParameterStore::from_json(j.at("arrays"));
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(fmt::format("malformed model parameters: {}", ex.what()));
  }
  check_config(p.config_);
  const int d = p.config_.hidden;
  const int L = p.config_.lags;
  const std::pair<Eigen::Index, Eigen::Index> shapes[] = {{d, 1}, {1, L}, {2 * L, d}, {1, d}, {d, 1},
                                                          {d, d}, {1, d}, {1, d},     {d, 1}, {1, 1}};
  for (std::size_t k = 0; k < std::size(kNames); ++k) {
    if (!p.store_.contains(kNames[k])) throw ParseError(fmt::format("model parameters lack '{}'", kNames[k]));
    const Matrix& m = p.store_.get(kNames[k]);
    if (m.rows() != shapes[k].first || m.cols() != shapes[k].second) {
      throw ParseError(fmt::format("parameter '{}' is {}x{}, expected {}x{}", kNames[k], m.rows(), m.cols(), shapes[k].first,
                                   shapes[k].second));
    }
  }
  p.store_.check_finite();
  return p;
}

BoundParameters BoundParameters::leaves_of(ad::Tape& tape, const ModelParameters& params) { return bind(tape, params, true); }

BoundParameters BoundParameters::constants_of(ad::Tape& tape, const ModelParameters& params) {
  return bind(tape, params, false);
}

Matrix pair_features(const std::vector<Matrix>& windows) {
  if (windows.empty()) throw EmptyInputError("no windows");
  const auto L = windows.front().rows();
  const auto n = windows.front().cols();
  Matrix out(static_cast<Eigen::Index>(windows.size()) * n * n, 2 * L);
  Eigen::Index r = 0;
  for (const auto& w : windows) {
    if (w.rows() != L || w.cols() != n) throw SizeMismatchError("windows differ in shape");
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j, ++r) {
        out.block(r, 0, 1, L) = w.col(i).transpose();
        out.block(r, L, 1, L) = w.col(j).transpose();
      }
    }
  }
  return out;
}

Var attention_block(const BoundParameters& p, const Matrix& pairs, const Mask& tiled_support) {
  ad::Tape& tape = *p.att_w1.tape();
  if (pairs.cols() != p.att_w1.rows()) {
    throw SizeMismatchError(fmt::format("pair features have {} columns, attention expects {}", pairs.cols(), p.att_w1.rows()));
  }
  const Eigen::Index n = tiled_support.cols();
  if (pairs.rows() != tiled_support.rows() * n) throw SizeMismatchError("pair rows do not match the support");
  Var hidden = ad::tanh(ad::add_row(ad::matmul(tape.constant(pairs), p.att_w1), p.att_b1));
  Var scores = ad::reshape(ad::matmul(hidden, p.att_w2), tiled_support.rows(), n);
  return ad::masked_softmax_rows(scores, tiled_support);
}

Var dynamics_block(const BoundParameters& p, const Var& state, const std::vector<Matrix>& lagged, const Var& attention,
                   const Matrix& time_column) {
  ad::Tape& tape = *state.tape();
  const int L = p.config.lags;
  if (static_cast<int>(lagged.size()) != L - 1) {
    throw SizeMismatchError(fmt::format("expected {} lagged blocks, got {}", L - 1, lagged.size()));
  }
  const Eigen::Index K = state.rows();
  const Eigen::Index n = state.cols();
  Var l = ad::softmax(p.temporal_logits);
  Var m = ad::scalar_mul(ad::slice(l, 0, 0, 1, 1), state);
  for (int d = 1; d < L; ++d) {
    m = m + ad::scalar_mul(ad::slice(l, 0, d, 1, 1), tape.constant(lagged[static_cast<std::size_t>(d - 1)]));
  }
  Var s = ad::row_sum(ad::mul(attention, ad::repeat_rows(m, n)));
  // g' = s W^T is rank one, so g' W1 = s (W^T W1).
  Var pre = ad::matmul(s, ad::matmul(ad::transpose(p.projection), p.dyn_w1)) +
            ad::matmul(tape.constant(time_column), p.dyn_wt);
  Var h = ad::tanh(ad::add_row(pre, p.dyn_b1));
  Var f = ad::add_row(ad::matmul(h, p.dyn_w2), p.dyn_b2);
  return ad::reshape(f, K, n);
}

Eigen::MatrixXd compute_attention(const ModelParameters& params, const Eigen::MatrixXd& window, const Mask& support) {
  if (window.rows() != params.config().lags) {
    throw SizeMismatchError(fmt::format("window has {} rows, model uses {} lags", window.rows(), params.config().lags));
  }
  if (support.rows() != window.cols() || support.cols() != window.cols()) throw SizeMismatchError("support does not match window");
  ad::Tape tape;
  auto p = BoundParameters::constants_of(tape, params);
  return attention_block(p, pair_features({window}), support).value();
}

Eigen::MatrixXd aggregate(const ModelParameters& params, const Eigen::MatrixXd& attention, const Eigen::MatrixXd& window) {
  if (window.rows() != params.config().lags) throw SizeMismatchError("window rows differ from the lag count");
  if (attention.rows() != window.cols() || attention.cols() != window.cols()) throw SizeMismatchError("attention does not match window");
  const Eigen::VectorXd l = params.temporal_attention();
  const Eigen::VectorXd m = window.transpose() * l;
  const Eigen::VectorXd s = attention * m;
  return s * params.get("projection").transpose();
}

Eigen::VectorXd ode_rhs(const ModelParameters& params, const Eigen::MatrixXd& attention, const Eigen::MatrixXd& window,
                        double normalized_time) {
  if (!window.allFinite()) throw NonFiniteError("model state is not finite");
  const Eigen::MatrixXd g = aggregate(params, attention, window);
  Eigen::MatrixXd pre = g * params.get("dyn_w1");
  pre.rowwise() += normalized_time * params.get("dyn_wt").row(0) + params.get("dyn_b1").row(0);
  const Eigen::MatrixXd h = pre.array().tanh();
  Eigen::VectorXd f = h * params.get("dyn_w2");
  f.array() += params.get("dyn_b2")(0, 0);
  return f;
}

void HistoryBuffer::push(double t, const Eigen::RowVectorXd& x) {
  if (x.size() != n_) throw SizeMismatchError(fmt::format("history sample has {} entries, expected {}", x.size(), n_));
  if (!times_.empty()) {
    if (t < times_.back()) throw ValidationError("history samples must be pushed in time order");
    if (t == times_.back()) {
      values_.back() = x;
      return;
    }
  }
  times_.push_back(t);
  values_.push_back(x);
}

Eigen::RowVectorXd HistoryBuffer::at(double t) const {
  if (times_.empty()) throw EmptyInputError("history buffer is empty");
  if (t <= times_.front()) return values_.front();
  if (t >= times_.back()) {
    if (t > times_.back() + 1e-9 * std::max(1.0, std::abs(t))) throw ExtrapolationError(fmt::format("history queried at {} past its end {}", t, times_.back()));
    return values_.back();
  }
  const auto it = std::upper_bound(times_.begin(), times_.end(), t);
  const auto hi = static_cast<std::size_t>(it - times_.begin());
  const std::size_t lo = hi - 1;
  const double w = (t - times_[lo]) / (times_[hi] - times_[lo]);
  return (1.0 - w) * values_[lo] + w * values_[hi];
}

Eigen::MatrixXd HistoryBuffer::window(double t, int lags, double dt) const {
  Eigen::MatrixXd w(lags, n_);
  for (int d = 0; d < lags; ++d) w.row(d) = at(t - d * dt);
  return w;
}

void HistoryBuffer::truncate_after(double t) {
  const auto it = std::upper_bound(times_.begin(), times_.end(), t);
  const auto keep = static_cast<std::size_t>(it - times_.begin());
  times_.resize(keep);
  values_.resize(keep);
}

std::vector<Eigen::VectorXd> ode_solve(const std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>& rhs,
                                       const Eigen::VectorXd& x0, double t0, double t1, int steps,
                                       const std::function<void(double, const Eigen::VectorXd&)>& on_step) {
  if (steps < 1) throw ConfigError(fmt::format("solver steps must be at least 1, got {}", steps));
  if (!(t1 > t0)) throw ConfigError(fmt::format("integration interval [{}, {}] is empty", t0, t1));
  const double h = (t1 - t0) / steps;
  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<std::size_t>(steps));
  Eigen::VectorXd x = x0;
  for (int k = 0; k < steps; ++k) {
    const double t = t0 + k * h;
    const Eigen::VectorXd k1 = rhs(t, x);
    const Eigen::VectorXd k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1);
    const Eigen::VectorXd k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2);
    const Eigen::VectorXd k4 = rhs(t + h, x + h * k3);
    x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x.allFinite()) throw BlowUpError(fmt::format("solver state is not finite at step {}", k + 1));
    const double tn = k + 1 == steps ? t1 : t0 + (k + 1) * h;
    if (on_step) on_step(tn, x);
    out.push_back(x);
  }
  return out;
}

double loss(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& observed, const std::vector<Eigen::MatrixXd>& attention,
            const Eigen::MatrixXd& prior_target, double lambda1, double lambda2) {
  if (predicted.rows() != observed.rows() || predicted.cols() != observed.cols()) {
    throw SizeMismatchError("predicted and observed trajectories differ in shape");
  }
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("regularization weights must be nonnegative");
  double value = predicted.rows() == 0 ? 0.0 : (predicted - observed).squaredNorm() / static_cast<double>(predicted.rows());
  if (!attention.empty()) {
    double f = 0.0, l1 = 0.0;
    for (const auto& a : attention) {
      if (a.rows() != prior_target.rows() || a.cols() != prior_target.cols()) throw SizeMismatchError("attention snapshot shape");
      f += (a - prior_target).norm();
      l1 += a.cwiseAbs().sum();
    }
    value += lambda1 * f / static_cast<double>(attention.size()) + lambda2 * l1 / static_cast<double>(attention.size());
  }
  return value;
}

Eigen::MatrixXd Normalization::forward(const Eigen::MatrixXd& x) const {
  return ((x.rowwise() - mean).array().rowwise() / scale.array()).matrix();
}

Eigen::MatrixXd Normalization::inverse(const Eigen::MatrixXd& z) const {
  return ((z.array().rowwise() * scale.array()).matrix()).rowwise() + mean;
}

TrainingBatch make_batch(const data::Dataset& dataset, const graph::PriorGraph& prior, const TrainedModel& frame,
                         const std::vector<std::size_t>& train) {
  const int n = dataset.vertex_count();
  const int L = frame.params.config().lags;
  const int S = frame.config.solver_steps;
  if (S < 1) throw ConfigError("solver steps must be at least 1");
  if (prior.n() != n) throw SizeMismatchError(fmt::format("prior has {} vertices, data has {}", prior.n(), n));
  for (int i = 0; i < n; ++i) {
    if (!prior.support().row(i).any()) throw ConfigError(fmt::format("vertex {} has an empty attention support", i));
  }
  const double dt = frame.dt;
  const std::set<std::size_t> in_train(train.begin(), train.end());

  struct Window {
    std::size_t series;
    std::size_t a;
    bool perturbed;
  };
  std::vector<Window> windows;
  std::vector<std::size_t> used = dataset.unperturbed_indices();
  const std::size_t reference = used.front();
  if (frame.config.use_perturbations) {
    for (std::size_t s : dataset.perturbed_indices()) used.push_back(s);
  }
  std::size_t count_plain = 0, count_perturbed = 0;
  for (std::size_t s : used) {
    const bool perturbed = dataset.is_perturbed(s);
    double onset = -std::numeric_limits<double>::infinity();
    if (perturbed) {
      onset = std::numeric_limits<double>::infinity();
      for (const auto& r : dataset.perturbations.at(s)) onset = std::min(onset, r.time);
    }
    const auto& times = dataset.series[s].times();
    for (std::size_t a = 0; a + 1 < times.size(); ++a) {
      if (!in_train.count(a) || !in_train.count(a + 1)) continue;
      if (perturbed && times[a] < onset - 1e-9 * std::max(1.0, std::abs(onset))) continue;
      windows.push_back({s, a, perturbed});
      (perturbed ? count_perturbed : count_plain) += 1;
    }
  }
  if (windows.empty()) throw InsufficientDataError("no observation interval has both ends in the training set");

  TrainingBatch b;
  b.vertices = n;
  b.windows = static_cast<int>(windows.size());
  b.interval = dt;
  const auto K = static_cast<Eigen::Index>(windows.size());
  b.start.resize(K, n);
  b.target.resize(K, n);
  b.row_weight.resize(K, n);
  b.lagged.assign(static_cast<std::size_t>(S), std::vector<std::vector<Matrix>>(4, std::vector<Matrix>(static_cast<std::size_t>(L - 1), Matrix(K, n))));
  b.time.assign(static_cast<std::size_t>(S), std::vector<Matrix>(4, Matrix(K * n, 1)));

  std::vector<Matrix> attention_windows;
  attention_windows.reserve(windows.size());
  std::map<std::size_t, std::pair<Eigen::MatrixXd, HistoryBuffer>> cache;
  for (Eigen::Index k = 0; k < K; ++k) {
    const Window& w = windows[static_cast<std::size_t>(k)];
    auto it = cache.find(w.series);
    if (it == cache.end()) {
      Eigen::MatrixXd z = frame.normalization.forward(dataset.series[w.series].values());
      HistoryBuffer h = training_history(z, dataset.series[w.series].times(), train, dataset.series[w.series].length());
      it = cache.emplace(w.series, std::make_pair(std::move(z), std::move(h))).first;
    }
    const Eigen::MatrixXd& z = it->second.first;
    const HistoryBuffer& hist = it->second.second;
    const auto& times = dataset.series[w.series].times();
    const double ta = times[w.a];
    b.start.row(k) = z.row(static_cast<Eigen::Index>(w.a));
    b.target.row(k) = z.row(static_cast<Eigen::Index>(w.a + 1));
    const double weight = w.perturbed ? frame.config.perturbation_weight / static_cast<double>(count_perturbed)
                                      : 1.0 / static_cast<double>(count_plain);
    b.row_weight.row(k).setConstant(weight);
    attention_windows.push_back(hist.window(ta, L, dt));
    for (int s = 0; s < S; ++s) {
      for (int c = 0; c < 4; ++c) {
        const double tau = ta + (s + kStage[c]) * dt / S;
        for (int d = 1; d < L; ++d) {
          b.lagged[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)][static_cast<std::size_t>(d - 1)].row(k) = hist.at(tau - d * dt);
        }
        b.time[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)].block(k * n, 0, n, 1).setConstant(frame.normalized_time(tau));
      }
    }
    if (w.series == reference) {
      b.snapshot_times.push_back(ta);
      b.snapshot_windows.push_back(static_cast<int>(k));
    }
  }
  b.pairs = pair_features(attention_windows);
  b.tiled_support = tile(prior.support(), static_cast<int>(K));
  return b;
}

LossTerms batch_loss(const BoundParameters& p, const TrainingBatch& b, const Eigen::MatrixXd& prior_target, double lambda1,
                     double lambda2, int solver_steps) {
  ad::Tape& tape = *p.projection.tape();
  const Eigen::Index K = b.windows;
  const Eigen::Index n = b.vertices;
  if (static_cast<int>(b.lagged.size()) != solver_steps) throw ConfigError("batch was built for a different solver step count");
  Var A = attention_block(p, b.pairs, b.tiled_support);
  Var x = tape.constant(b.start);
  const double h = 1.0 / solver_steps;
  for (int s = 0; s < solver_steps; ++s) {
    const auto& lag = b.lagged[static_cast<std::size_t>(s)];
    const auto& tc = b.time[static_cast<std::size_t>(s)];
    Var k1 = dynamics_block(p, x, lag[0], A, tc[0]);
    Var k2 = dynamics_block(p, x + 0.5 * h * k1, lag[1], A, tc[1]);
    Var k3 = dynamics_block(p, x + 0.5 * h * k2, lag[2], A, tc[2]);
    Var k4 = dynamics_block(p, x + h * k3, lag[3], A, tc[3]);
    x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  Var err = ad::sum(ad::mul(ad::square(x - tape.constant(b.target)), tape.constant(b.row_weight)));

  Matrix target_tiled(K * n, n);
  for (Eigen::Index k = 0; k < K; ++k) target_tiled.middleRows(k * n, n) = prior_target;
  Var diff_sq = ad::square(A - tape.constant(target_tiled));
  Var per_window = ad::row_sum(ad::reshape(ad::row_sum(diff_sq), K, n));
  Var frob = ad::mean(ad::sqrt(per_window));
  Var l1 = ad::scale(ad::sum(ad::abs(A)), 1.0 / static_cast<double>(K));

  LossTerms out;
  out.mse = err.scalar();
  out.frobenius = frob.scalar();
  out.l1 = l1.scalar();
  out.total = err + lambda1 * frob + lambda2 * l1;
  return out;
}

TrainedModel train(const data::Dataset& dataset, const graph::PriorGraph& prior, const TrainConfig& config,
                   std::vector<std::size_t> train_indices) {
  dataset.validate();
  check_config(config.model);
  if (config.lambda1 < 0.0 || config.lambda2 < 0.0) throw ConfigError("regularization weights must be nonnegative");
  if (config.solver_steps < 1) throw ConfigError("solver steps must be at least 1");
  if (config.epochs < 0) throw ConfigError("epoch count must be nonnegative");
  if (dataset.unperturbed_indices().empty()) throw ValidationError("dataset has no unperturbed series");
  const auto& ref = dataset.series[dataset.unperturbed_indices().front()];
  if (train_indices.empty()) train_indices = all_indices(ref.length());
  std::sort(train_indices.begin(), train_indices.end());

  TrainedModel model;
  model.config = config;
  model.prior = prior;
  model.params = ModelParameters(config.model, config.seed);
  model.dt = dataset.dt();
  model.time_origin = ref.start();
  model.time_span = std::max(ref.end() - ref.start(), model.dt);
  model.train_indices = train_indices;
  const int n = dataset.vertex_count();
  model.normalization.mean = Eigen::RowVectorXd::Zero(n);
  model.normalization.scale = Eigen::RowVectorXd::Ones(n);
  if (config.normalize) {
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(train_indices.size() * dataset.unperturbed_indices().size()), n);
    Eigen::Index r = 0;
    for (std::size_t s : dataset.unperturbed_indices()) {
      for (std::size_t idx : train_indices) rows.row(r++) = dataset.series[s].values().row(static_cast<Eigen::Index>(idx));
    }
    model.normalization.mean = rows.colwise().mean();
    const Eigen::RowVectorXd var = (rows.rowwise() - model.normalization.mean).array().square().colwise().mean();
    for (int i = 0; i < n; ++i) model.normalization.scale(i) = var(i) > 1e-24 ? std::sqrt(var(i)) : 1.0;
  }

  const TrainingBatch batch = make_batch(dataset, prior, model, train_indices);
  const Eigen::MatrixXd target = prior.attention_target();
  ad::Optimizer optimizer(config.optimizer);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    ad::Tape tape;
    auto p = BoundParameters::leaves_of(tape, model.params);
    try {
      LossTerms terms = batch_loss(p, batch, target, config.lambda1, config.lambda2, config.solver_steps);
      model.loss_history.push_back(terms.total.scalar());
      tape.backward(terms.total);
      optimizer.step(model.params.store(), ad::gradients(tape, p.leaves));
    } catch (const NonFiniteError& ex) {
      throw NonFiniteError(fmt::format("training diverged at epoch {}: {}", epoch, ex.what()));
    }
  }

  ad::Tape tape;
  auto p = BoundParameters::constants_of(tape, model.params);
  const Matrix A = attention_block(p, batch.pairs, batch.tiled_support).value();
  for (std::size_t k = 0; k < batch.snapshot_windows.size(); ++k) {
    model.attention.times.push_back(batch.snapshot_times[k]);
    model.attention.snapshots.push_back(A.middleRows(static_cast<Eigen::Index>(batch.snapshot_windows[k]) * n, n));
  }
  return model;
}

Eigen::MatrixXd predict(const TrainedModel& model, const data::Dataset& dataset, const std::vector<double>& query_times,
                        std::size_t series_index) {
  if (series_index >= dataset.series.size()) throw ValidationError(fmt::format("series {} does not exist", series_index));
  const auto& series = dataset.series[series_index];
  const int n = series.vertex_count();
  if (n != model.prior.n()) throw SizeMismatchError("dataset and model differ in vertex count");
  const Eigen::MatrixXd z = model.normalization.forward(series.values());
  const auto& times = series.times();
  const auto& train = model.train_indices;
  const double tol = 1e-9 * std::max(1.0, std::abs(series.end()));

  Eigen::MatrixXd out(static_cast<Eigen::Index>(query_times.size()), n);
  // Group queries by their preceding training index so one rollout serves several.
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t q = 0; q < query_times.size(); ++q) {
    const double t = query_times[q];
    if (t < series.start() - tol || t > series.end() + tol) {
      throw ExtrapolationError(fmt::format("query time {} outside the observed span [{}, {}]", t, series.start(), series.end()));
    }
    // Nearest training point strictly before t; the first training point itself is returned as observed.
    std::size_t a = times.size();
    for (std::size_t idx : train) {
      if (times[idx] < t - tol) a = idx;
      else break;
    }
    if (a == times.size()) {
      if (std::abs(t - times[train.front()]) > tol) throw ExtrapolationError(fmt::format("query time {} precedes the first training point", t));
      out.row(static_cast<Eigen::Index>(q)) = z.row(static_cast<Eigen::Index>(train.front()));
      continue;
    }
    groups[a].push_back(q);
  }
  for (const auto& [a, queries] : groups) {
    const double ta = times[a];
    double last = ta;
    for (std::size_t q : queries) last = std::max(last, query_times[q]);
    HistoryBuffer buffer = training_history(z, times, train, a);
    Eigen::VectorXd x = z.row(static_cast<Eigen::Index>(a)).transpose();
    std::vector<std::pair<double, Eigen::VectorXd>> states{{ta, x}};
    double t = ta;
    while (t < last - tol) {
      const double frac = std::min(1.0, (last - t) / model.dt);
      x = rollout_interval(model, buffer, x, t, frac);
      t += frac * model.dt;
      states.emplace_back(t, x);
    }
    for (std::size_t q : queries) {
      const double tq = query_times[q];
      // Query on the rollout grid, or between two rollout points.
      std::size_t k = 0;
      while (k + 1 < states.size() && states[k + 1].first <= tq + tol) ++k;
      Eigen::VectorXd v = states[k].second;
      if (std::abs(states[k].first - tq) > tol) {
        HistoryBuffer local = training_history(z, times, train, a);
        Eigen::VectorXd xs = z.row(static_cast<Eigen::Index>(a)).transpose();
        double ts = ta;
        while (ts < tq - tol) {
          const double frac = std::min(1.0, (tq - ts) / model.dt);
          xs = rollout_interval(model, local, xs, ts, frac);
          ts += frac * model.dt;
        }
        v = xs;
      }
      out.row(static_cast<Eigen::Index>(q)) = v.transpose();
    }
  }
  return model.normalization.inverse(out);
}

ExtractedGraphs extract_graphs(const TrainedModel& model, double threshold) {
  ExtractedGraphs g;
  g.attention = model.attention;
  for (std::size_t k = 0; k < model.attention.size(); ++k) {
    g.dynamic.times.push_back(model.attention.times[k]);
    g.dynamic.snapshots.push_back(graph::binarize(model.attention.snapshots[k], threshold));
  }
  g.static_graph = model.attention.empty() ? graph::WeightedDigraph(model.prior.n())
                                           : graph::binarize(graph::time_average(model.attention), threshold);
  return g;
}

double hysteresis_index(const ModelParameters& params) {
  const Eigen::VectorXd l = params.temporal_attention();
  const Eigen::VectorXd idx = Eigen::VectorXd::LinSpaced(l.size(), 0.0, static_cast<double>(l.size() - 1));
  const double mean = l.dot(idx);
  return std::max(0.0, l.dot(idx.cwiseAbs2()) - mean * mean);
}

double hysteresis_index(const TrainedModel& model) { return hysteresis_index(model.params); }

Eigen::VectorXd sensitivity_profile(const TrainedModel& model, const data::Dataset& dataset, int vertex,
                                    const SensitivityConfig& config) {
  const int n = model.prior.n();
  if (vertex < 0 || vertex >= n) throw ValidationError(fmt::format("vertex {} out of range", vertex));
  if (config.series_index >= dataset.series.size()) throw ValidationError("sensitivity series does not exist");
  if (config.starts < 1) throw ConfigError("sensitivity needs at least one start");
  const int horizon = config.horizon > 0 ? config.horizon : model.params.config().lags;
  const auto& series = dataset.series[config.series_index];
  const auto& times = series.times();
  const Eigen::MatrixXd z = model.normalization.forward(series.values());
  const auto& train = model.train_indices;

  std::vector<std::size_t> candidates;
  for (std::size_t idx : train) {
    if (idx >= static_cast<std::size_t>(model.params.config().lags) && idx + static_cast<std::size_t>(horizon) < times.size()) {
      candidates.push_back(idx);
    }
  }
  if (candidates.empty()) throw InsufficientDataError("series too short for the sensitivity horizon");
  std::vector<std::size_t> starts;
  const int count = std::min<int>(config.starts, static_cast<int>(candidates.size()));
  for (int k = 0; k < count; ++k) {
    starts.push_back(candidates[static_cast<std::size_t>((2 * k + 1) * candidates.size() / (2 * static_cast<std::size_t>(count)))]);
  }

  Eigen::VectorXd response = Eigen::VectorXd::Zero(n);
  const double kick = config.epsilon / model.normalization.scale(vertex);
  for (std::size_t a : starts) {
    auto rollout = [&](double eps) {
      HistoryBuffer buffer = training_history(z, times, train, a);
      Eigen::VectorXd x = z.row(static_cast<Eigen::Index>(a)).transpose();
      x(vertex) += eps;
      buffer.truncate_after(times[a] - 1e-12);
      buffer.push(times[a], x.transpose());
      std::vector<Eigen::VectorXd> path;
      double t = times[a];
      for (int h = 0; h < horizon; ++h) {
        x = rollout_interval(model, buffer, x, t, 1.0);
        t += model.dt;
        path.push_back(x);
      }
      return path;
    };
    const auto base = rollout(0.0);
    const auto kicked = rollout(kick);
    for (std::size_t h = 0; h < base.size(); ++h) response += (kicked[h] - base[h]).cwiseAbs();
  }
  return response;
}

double sensitivity_check(const TrainedModel& model, const data::Dataset& dataset, int vertex, const SensitivityConfig& config) {
  const int n = model.prior.n();
  if (vertex < 0 || vertex >= n) throw ValidationError(fmt::format("vertex {} out of range", vertex));
  std::vector<int> neighbours;
  for (int j = 0; j < n; ++j) {
    if (j != vertex && model.prior.allows(j, vertex)) neighbours.push_back(j);
  }
  if (neighbours.size() < 3) {
    throw InsufficientDataError(fmt::format("vertex {} has {} supported out-neighbours, need at least 3", vertex, neighbours.size()));
  }
  if (model.attention.empty()) throw InsufficientDataError("model has no attention snapshots");
  const Eigen::VectorXd response = sensitivity_profile(model, dataset, vertex, config);
  const Eigen::MatrixXd mean_attention = graph::mean_snapshot(model.attention);
  const auto m = static_cast<Eigen::Index>(neighbours.size());
  Eigen::VectorXd s(m), a(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    s(k) = response(neighbours[static_cast<std::size_t>(k)]);
    a(k) = mean_attention(neighbours[static_cast<std::size_t>(k)], vertex);
  }
  const Eigen::VectorXd sc = s.array() - s.mean();
  const Eigen::VectorXd ac = a.array() - a.mean();
  const double denom = std::sqrt(sc.squaredNorm() * ac.squaredNorm());
  if (!(denom > 0.0)) throw DegenerateDataError("correlation undefined: sensitivities or attention weights are constant");
  return sc.dot(ac) / denom;
}

double negative_log_posterior(double mse, std::size_t count, double sigma2, double frobenius, double l1, double beta,
                              double alpha_mix, double log_partition) {
  if (!(sigma2 > 0.0)) throw ConfigError("noise variance must be positive");
  if (!(beta >= 0.0) || alpha_mix < 0.0 || alpha_mix > 1.0) throw ConfigError("need beta >= 0 and alpha_mix in [0, 1]");
  const double K = static_cast<double>(count);
  const double likelihood = K * mse / (2.0 * sigma2) + 0.5 * K * std::log(2.0 * std::numbers::pi * sigma2);
  const double temperature = beta * K / (2.0 * sigma2);
  const double prior = temperature * (alpha_mix * frobenius + (1.0 - alpha_mix) * l1) + log_partition;
  return likelihood + prior;
}

nlohmann::json to_json(const TrainedModel& m) {
  nlohmann::json support = nlohmann::json::array();
  for (int i = 0; i < m.prior.n(); ++i)
    for (int j = 0; j < m.prior.n(); ++j)
      if (m.prior.allows(i, j)) support.push_back({i, j});
  nlohmann::json snaps = nlohmann::json::array();
  for (const auto& s : m.attention.snapshots) {
    std::vector<double> flat;
    for (Eigen::Index i = 0; i < s.rows(); ++i)
      for (Eigen::Index j = 0; j < s.cols(); ++j) flat.push_back(s(i, j));
    snaps.push_back(flat);
  }
  const auto& c = m.config;
  return {
      {"parameters", m.params.to_json()},
      {"train_config",
       {{"lambda1", c.lambda1},
        {"lambda2", c.lambda2},
        {"epochs", c.epochs},
        {"solver_steps", c.solver_steps},
        {"perturbation_weight", c.perturbation_weight},
        {"use_perturbations", c.use_perturbations},
        {"normalize", c.normalize},
        {"seed", c.seed},
        {"optimizer",
         {{"kind", c.optimizer.kind == ad::OptimizerConfig::Kind::adam ? "adam" : "momentum"},
          {"learning_rate", c.optimizer.learning_rate},
          {"momentum", c.optimizer.momentum},
          {"clip_norm", c.optimizer.clip_norm}}}}},
      {"prior", graph::to_json(m.prior.digraph())},
      {"support", support},
      {"normalization",
       {{"mean", std::vector<double>(m.normalization.mean.data(), m.normalization.mean.data() + m.normalization.mean.size())},
        {"scale", std::vector<double>(m.normalization.scale.data(), m.normalization.scale.data() + m.normalization.scale.size())}}},
      {"time_origin", m.time_origin},
      {"time_span", m.time_span},
      {"dt", m.dt},
      {"train_indices", m.train_indices},
      {"attention", {{"times", m.attention.times}, {"snapshots", snaps}}},
      {"loss_history", m.loss_history},
  };
}

TrainedModel model_from_json(const nlohmann::json& j) {
  TrainedModel m;
  try {
    m.params = ModelParameters::from_json(j.at("parameters"));
    const auto& c = j.at("train_config");
    m.config.model = m.params.config();
    m.config.lambda1 = c.at("lambda1").get<double>();
    m.config.lambda2 = c.at("lambda2").get<double>();
    m.config.epochs = c.at("epochs").get<int>();
    m.config.solver_steps = c.at("solver_steps").get<int>();
    m.config.perturbation_weight = c.at("perturbation_weight").get<double>();
    m.config.use_perturbations = c.at("use_perturbations").get<bool>();
    m.config.normalize = c.at("normalize").get<bool>();
    m.config.seed = c.at("seed").get<std::uint64_t>();
    const auto& o = c.at("optimizer");
    m.config.optimizer.kind = o.at("kind").get<std::string>() == "adam" ? ad::OptimizerConfig::Kind::adam : ad::OptimizerConfig::Kind::momentum;
    m.config.optimizer.learning_rate = o.at("learning_rate").get<double>();
    m.config.optimizer.momentum = o.at("momentum").get<double>();
    m.config.optimizer.clip_norm = o.at("clip_norm").get<double>();
    const auto prior = graph::digraph_from_json(j.at("prior"));
    const int n = prior.n();
    Mask support = Mask::Constant(n, n, false);
    for (const auto& pair : j.at("support")) support(pair.at(0).get<int>(), pair.at(1).get<int>()) = true;
    m.prior = graph::PriorGraph(prior, support);
    const auto mean = j.at("normalization").at("mean").get<std::vector<double>>();
    const auto scale = j.at("normalization").at("scale").get<std::vector<double>>();
    if (static_cast<int>(mean.size()) != n || static_cast<int>(scale.size()) != n) throw ParseError("normalization size differs from the prior");
    m.normalization.mean = Eigen::Map<const Eigen::RowVectorXd>(mean.data(), n);
    m.normalization.scale = Eigen::Map<const Eigen::RowVectorXd>(scale.data(), n);
    m.time_origin = j.at("time_origin").get<double>();
    m.time_span = j.at("time_span").get<double>();
    m.dt = j.at("dt").get<double>();
    m.train_indices = j.at("train_indices").get<std::vector<std::size_t>>();
    m.attention.times = j.at("attention").at("times").get<std::vector<double>>();
    for (const auto& s : j.at("attention").at("snapshots")) {
      const auto flat = s.get<std::vector<double>>();
      if (static_cast<int>(flat.size()) != n * n) throw ParseError("attention snapshot has the wrong size");
      Eigen::MatrixXd a(n, n);
      for (int r = 0; r < n; ++r)
        for (int q = 0; q < n; ++q) a(r, q) = flat[static_cast<std::size_t>(r * n + q)];
      m.attention.snapshots.push_back(a);
    }
    m.loss_history = j.at("loss_history").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(fmt::format("malformed model checkpoint: {}", ex.what()));
  }
  return m;
}

void save_model(const std::filesystem::path& path, const TrainedModel& model) { graph::write_json_file(path, to_json(model)); }

TrainedModel load_model(const std::filesystem::path& path) { return model_from_json(graph::read_json_file(path)); }

}  // namespace ritini::model
