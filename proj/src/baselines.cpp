#include "ritini/baselines.hpp"

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "ritini/errors.hpp"

namespace ritini::baselines {

namespace {

constexpr double kLog2PiE = 2.8378770664093453;  // log(2 pi e)

double log_det_spd(const Eigen::MatrixXd& s, double jitter) {
  Eigen::MatrixXd m = s;
  m.diagonal().array() += jitter;
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw DegenerateDataError("covariance is singular after jitter");
  double ld = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  if (!std::isfinite(ld)) throw DegenerateDataError("covariance is singular after jitter");
  return ld;
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
  return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

Eigen::MatrixXd columns_of(const Eigen::MatrixXd& data, const std::vector<int>& cols) {
  Eigen::MatrixXd out(data.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = data.col(cols[k]);
  return out;
}

std::vector<int> with(std::vector<int> v, int x) {
  v.push_back(x);
  return v;
}

std::vector<int> without(const std::vector<int>& v, int x) {
  std::vector<int> out;
  for (int y : v)
    if (y != x) out.push_back(y);
  return out;
}

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

// Separate deterministic permutation stream for every test.
SignificanceConfig derived(const SignificanceConfig& base, int a, int b, int c) {
  std::seed_seq seq{static_cast<std::uint32_t>(base.seed), static_cast<std::uint32_t>(base.seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(c)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  SignificanceConfig s = base;
  s.seed = (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
  return s;
}

Eigen::MatrixXd zscore(Eigen::MatrixXd x) {
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    double mu = x.col(c).mean();
    double sd = std::sqrt((x.col(c).array() - mu).square().sum() / static_cast<double>(x.rows() - 1));
    if (!(sd > 0.0)) throw DegenerateDataError(fmt::format("column {} has zero variance", c));
    x.col(c) = (x.col(c).array() - mu) / sd;
  }
  return x;
}

}  // namespace

void EntropyEstimatorConfig::validate() const {
  if (!(jitter >= 0.0)) throw ConfigError("entropy jitter must be >= 0");
  if (k < 1) throw ConfigError("k-NN estimator needs k >= 1");
}

void SignificanceConfig::validate() const {
  if (n_perm < 19) throw ConfigError(fmt::format("n_perm must be >= 19, got {}", n_perm));
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("significance level must lie in (0, 1)");
}

double gaussian_entropy(const Eigen::MatrixXd& samples, double jitter) {
  if (samples.cols() == 0) return 0.0;
  if (samples.rows() <= samples.cols() + 1)
    throw InsufficientDataError(fmt::format("{} samples for {} dimensions", samples.rows(), samples.cols()));
  double d = static_cast<double>(samples.cols());
  return 0.5 * (d * kLog2PiE + log_det_spd(covariance(samples), jitter));
}

double gaussian_conditional_entropy(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double jitter) {
  if (y.cols() > 0 && x.rows() != y.rows()) throw SizeMismatchError("conditional entropy: sample counts differ");
  if (x.rows() <= x.cols() + y.cols() + 1)
    throw InsufficientDataError(fmt::format("{} samples for {} + {} dimensions", x.rows(), x.cols(), y.cols()));
  if (y.cols() == 0) return gaussian_entropy(x, jitter);
  Eigen::MatrixXd xy(x.rows(), x.cols() + y.cols());
  xy << x, y;
  return gaussian_entropy(xy, jitter) - gaussian_entropy(y, jitter);
}

double knn_entropy(const Eigen::MatrixXd& samples, int k) {
  const Eigen::Index m = samples.rows();
  const Eigen::Index d = samples.cols();
  if (d == 0) return 0.0;
  if (m <= k) throw InsufficientDataError(fmt::format("{} samples for k = {}", m, k));
  std::vector<double> dist(static_cast<std::size_t>(m));
  double sum_log = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j)
      dist[static_cast<std::size_t>(j)] = (samples.row(i) - samples.row(j)).cwiseAbs().maxCoeff();
    dist[static_cast<std::size_t>(i)] = std::numeric_limits<double>::infinity();
    std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
    double eps = dist[static_cast<std::size_t>(k - 1)];
    if (!(eps > 0.0)) throw DegenerateDataError("duplicate samples in k-NN entropy");
    sum_log += std::log(2.0 * eps);
  }
  using boost::math::digamma;
  return digamma(static_cast<double>(m)) - digamma(static_cast<double>(k)) +
         static_cast<double>(d) * sum_log / static_cast<double>(m);
}

double conditional_entropy(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const EntropyEstimatorConfig& config) {
  config.validate();
  if (config.kind == EntropyEstimatorConfig::Kind::gaussian) return gaussian_conditional_entropy(x, y, config.jitter);
  if (y.cols() == 0) return knn_entropy(x, config.k);
  Eigen::MatrixXd xy(x.rows(), x.cols() + y.cols());
  xy << x, y;
  return knn_entropy(xy, config.k) - knn_entropy(y, config.k);
}

EntropyKernel::EntropyKernel(Eigen::MatrixXd samples, EntropyEstimatorConfig config)
    : data_(std::move(samples)), config_(config) {
  config_.validate();
  if (data_.rows() < 3) throw InsufficientDataError("entropy kernel needs at least 3 samples");
  mean_ = data_.colwise().mean();
  if (config_.kind == EntropyEstimatorConfig::Kind::gaussian) cov_ = covariance(data_);
}

double EntropyKernel::entropy(const std::vector<int>& columns, const Override& o) const {
  if (columns.empty()) return 0.0;
  const int d = static_cast<int>(columns.size());
  if (data_.rows() <= d + 1) throw InsufficientDataError(fmt::format("{} samples for {} dimensions", data_.rows(), d));
  const bool replaced = o.values != nullptr && contains(columns, o.column);
  if (config_.kind == EntropyEstimatorConfig::Kind::knn) {
    Eigen::MatrixXd sub = columns_of(data_, columns);
    if (replaced)
      for (int k = 0; k < d; ++k)
        if (columns[static_cast<std::size_t>(k)] == o.column) sub.col(k) = *o.values;
    return knn_entropy(sub, config_.k);
  }
  Eigen::MatrixXd s(d, d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) s(a, b) = cov_(columns[static_cast<std::size_t>(a)], columns[static_cast<std::size_t>(b)]);
  if (replaced) {
    const Eigen::VectorXd& v = *o.values;
    Eigen::VectorXd c = v.array() - v.mean();
    const double denom = static_cast<double>(data_.rows() - 1);
    for (int a = 0; a < d; ++a) {
      if (columns[static_cast<std::size_t>(a)] != o.column) continue;
      for (int b = 0; b < d; ++b) {
        int cb = columns[static_cast<std::size_t>(b)];
        double value = cb == o.column ? c.squaredNorm() / denom
                                      : c.dot((data_.col(cb).array() - mean_(cb)).matrix()) / denom;
        s(a, b) = value;
        s(b, a) = value;
      }
    }
  }
  return 0.5 * (d * kLog2PiE + log_det_spd(s, config_.jitter));
}

double EntropyKernel::conditional(const std::vector<int>& target, const std::vector<int>& given, const Override& o) const {
  std::vector<int> joint = target;
  joint.insert(joint.end(), given.begin(), given.end());
  return entropy(joint, o) - entropy(given, o);
}

Significance permutation_significance(const std::function<double(const Eigen::VectorXd&)>& statistic,
                                      const Eigen::VectorXd& candidate, const SignificanceConfig& config) {
  config.validate();
  const Eigen::Index m = candidate.size();
  if (m < 2) throw InsufficientDataError("permutation test needs at least 2 samples");
  Significance out;
  out.observed = statistic(candidate);
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<Eigen::Index> shift_dist(1, m - 1);
  Eigen::VectorXd shifted(m);
  int exceed = 0;
  for (int r = 0; r < config.n_perm; ++r) {
    Eigen::Index s = shift_dist(rng);
    shifted.head(m - s) = candidate.tail(m - s);
    shifted.tail(s) = candidate.head(s);
    if (statistic(shifted) >= out.observed) ++exceed;
  }
  out.p_value = (1.0 + exceed) / (1.0 + config.n_perm);
  out.significant = out.p_value < config.alpha;
  return out;
}

Eigen::MatrixXd markov_samples(const data::Dataset& dataset) {
  dataset.validate();
  const int n = dataset.vertex_count();
  Eigen::Index rows = 0;
  for (const auto& s : dataset.series) rows += static_cast<Eigen::Index>(s.length()) - 1;
  if (rows < 3) throw InsufficientDataError("too few samples for one-step pairs");
  Eigen::MatrixXd out(rows, 2 * n);
  Eigen::Index r = 0;
  for (const auto& s : dataset.series) {
    const Eigen::Index len = static_cast<Eigen::Index>(s.length()) - 1;
    if (len <= 0) continue;
    out.block(r, 0, len, n) = s.values().topRows(len);
    out.block(r, n, len, n) = s.values().bottomRows(len);
    r += len;
  }
  return zscore(out);
}

Eigen::MatrixXd contemporaneous_samples(const data::Dataset& dataset) {
  dataset.validate();
  Eigen::Index rows = 0;
  for (const auto& s : dataset.series) rows += static_cast<Eigen::Index>(s.length());
  Eigen::MatrixXd out(rows, dataset.vertex_count());
  Eigen::Index r = 0;
  for (const auto& s : dataset.series) {
    out.middleRows(r, static_cast<Eigen::Index>(s.length())) = s.values();
    r += static_cast<Eigen::Index>(s.length());
  }
  return zscore(out);
}

// ---- Granger ----

BaselineResult granger_graph(const data::Dataset& dataset, const GrangerConfig& config) {
  dataset.validate();
  const int p = config.lags;
  if (p < 1) throw ConfigError("Granger lag order must be >= 1");
  if (!(config.alpha > 0.0 && config.alpha < 1.0)) throw ConfigError("significance level must lie in (0, 1)");
  const int n = dataset.vertex_count();
  Eigen::Index rows = 0;
  for (const auto& s : dataset.series) {
    if (static_cast<int>(s.length()) <= 3 * p + 2)
      throw InsufficientDataError(fmt::format("series of length {} too short for {} lags", s.length(), p));
    rows += static_cast<Eigen::Index>(s.length()) - p;
  }
  const int tests = n * (n - 1);
  const double level = config.bonferroni && tests > 0 ? config.alpha / tests : config.alpha;

  auto lag_block = [&](int v) {
    Eigen::MatrixXd out(rows, p);
    Eigen::Index r = 0;
    for (const auto& s : dataset.series) {
      const Eigen::Index len = static_cast<Eigen::Index>(s.length()) - p;
      for (int l = 1; l <= p; ++l) out.block(r, l - 1, len, 1) = s.values().block(p - l, v, len, 1);
      r += len;
    }
    return out;
  };
  auto current = [&](int v) {
    Eigen::VectorXd out(rows);
    Eigen::Index r = 0;
    for (const auto& s : dataset.series) {
      const Eigen::Index len = static_cast<Eigen::Index>(s.length()) - p;
      out.segment(r, len) = s.values().block(p, v, len, 1);
      r += len;
    }
    return out;
  };
  auto rss = [&](const Eigen::MatrixXd& design, const Eigen::VectorXd& y, int src, int dst) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (qr.rank() < design.cols())
      throw CollinearityError(fmt::format("rank-deficient Granger design for pair {} -> {}", src, dst));
    Eigen::VectorXd beta = qr.solve(y);
    return (y - design * beta).squaredNorm();
  };

  BaselineResult result;
  result.graph = graph::WeightedDigraph(n);
  const double d1 = p;
  const double d2 = static_cast<double>(rows) - 2.0 * p - 1.0;
  if (d2 < 1) throw InsufficientDataError("not enough rows for the full Granger model");
  boost::math::fisher_f dist(d1, d2);
  for (int dst = 0; dst < n; ++dst) {
    Eigen::VectorXd y = current(dst);
    Eigen::MatrixXd own = lag_block(dst);
    Eigen::MatrixXd null_design(rows, p + 1);
    null_design << Eigen::VectorXd::Ones(rows), own;
    for (int src = 0; src < n; ++src) {
      if (src == dst) continue;
      Eigen::MatrixXd full(rows, 2 * p + 1);
      full << null_design, lag_block(src);
      double r0 = rss(null_design, y, src, dst);
      double r1 = rss(full, y, src, dst);
      if (!(r1 > 0.0)) throw DegenerateDataError(fmt::format("perfect Granger fit for pair {} -> {}", src, dst));
      double f = std::max(0.0, ((r0 - r1) / d1) / (r1 / d2));
      double pv = boost::math::cdf(boost::math::complement(dist, f));
      EdgeScore e{src, dst, f, pv, pv < level && f > 0.0};
      if (e.selected) result.graph.set_edge(src, dst, f);
      result.scores.push_back(e);
    }
  }
  return result;
}

// ---- information-theoretic methods ----

namespace {

struct Greedy {
  std::vector<int> chosen;
  std::vector<EdgeScore> scores;
};

// Maximum-statistic test: each surrogate round shifts every remaining
// candidate by the same offset and keeps the largest gain, so picking the
// best of several candidates does not inflate significance.
template <class Gain>
Significance max_statistic(const EntropyKernel& kernel, const std::vector<int>& pool, const std::vector<int>& current,
                           const Gain& gain, double observed, const SignificanceConfig& sig) {
  sig.validate();
  const Eigen::Index m = kernel.samples();
  if (m < 2) throw InsufficientDataError("permutation test needs at least 2 samples");
  std::mt19937_64 rng(sig.seed);
  std::uniform_int_distribution<Eigen::Index> shift_dist(1, m - 1);
  Eigen::VectorXd shifted(m);
  int exceed = 0;
  for (int r = 0; r < sig.n_perm; ++r) {
    const Eigen::Index s = shift_dist(rng);
    double top = -std::numeric_limits<double>::infinity();
    for (int j : pool) {
      const auto col = kernel.data().col(j);
      shifted.head(m - s) = col.tail(m - s);
      shifted.tail(s) = col.head(s);
      top = std::max(top, gain(current, j, EntropyKernel::Override{j, &shifted}));
    }
    if (top >= observed) ++exceed;
  }
  Significance out;
  out.observed = observed;
  out.p_value = (1.0 + exceed) / (1.0 + sig.n_perm);
  out.significant = out.p_value < sig.alpha;
  return out;
}

// Grows a parent set for one target column. `gain(chosen, j, override)`
// returns the statistic of adding candidate column j.
template <class Gain>
Greedy grow(const EntropyKernel& kernel, const std::vector<int>& candidates, const Gain& gain,
            const SignificanceConfig& sig, int target, int dst_vertex) {
  Greedy g;
  std::vector<int> pool = candidates;
  while (!pool.empty()) {
    int best = -1;
    double best_value = -std::numeric_limits<double>::infinity();
    for (int j : pool) {
      double v = gain(g.chosen, j, EntropyKernel::Override{});
      if (v > best_value) {
        best_value = v;
        best = j;
      }
    }
    Significance s = max_statistic(kernel, pool, g.chosen, gain, best_value,
                                   derived(sig, target, best, static_cast<int>(g.chosen.size())));
    g.scores.push_back(EdgeScore{best, dst_vertex, s.observed, s.p_value, s.significant});
    if (!s.significant) break;
    g.chosen.push_back(best);
    pool = without(pool, best);
  }
  return g;
}

std::vector<int> range(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

}  // namespace

BaselineResult oce_graph(const data::Dataset& dataset, const EntropyEstimatorConfig& entropy, const SignificanceConfig& sig) {
  sig.validate();
  const int n = dataset.vertex_count();
  EntropyKernel kernel(markov_samples(dataset), entropy);
  BaselineResult result;
  result.graph = graph::WeightedDigraph(n);
  for (int i = 0; i < n; ++i) {
    const std::vector<int> y{n + i};
    auto gain = [&](const std::vector<int>& k, int j, const EntropyKernel::Override& o) {
      if (contains(k, j)) return 0.0;
      return kernel.conditional(y, k, o) - kernel.conditional(y, with(k, j), o);
    };
    Greedy g = grow(kernel, range(n), gain, sig, i, i);
    // Divisive pass.
    std::vector<int> parents = g.chosen;
    for (int j : g.chosen) {
      std::vector<int> rest = without(parents, j);
      auto stat = [&](const Eigen::VectorXd& values) { return gain(rest, j, EntropyKernel::Override{j, &values}); };
      Significance s = permutation_significance(stat, kernel.data().col(j), derived(sig, i, j, 1000));
      if (!s.significant) parents = rest;
    }
    for (int j : parents) {
      double c = gain(without(parents, j), j, {});
      if (j != i && c > 0.0) result.graph.set_edge(j, i, c);
    }
    for (auto& e : g.scores) {
      e.selected = contains(parents, e.src) && e.src != i;
      if (e.src != i) result.scores.push_back(e);
    }
  }
  return result;
}

BaselineResult mte_graph(const data::Dataset& dataset, const EntropyEstimatorConfig& entropy, const SignificanceConfig& sig) {
  sig.validate();
  const int n = dataset.vertex_count();
  EntropyKernel kernel(markov_samples(dataset), entropy);
  BaselineResult result;
  result.graph = graph::WeightedDigraph(n);
  for (int j = 0; j < n; ++j) {
    const std::vector<int> y{n + j};
    auto te = [&](const std::vector<int>& z, int i, const EntropyKernel::Override& o) {
      std::vector<int> base = with(z, j);
      return kernel.conditional(y, base, o) - kernel.conditional(y, with(base, i), o);
    };
    Greedy g = grow(kernel, without(range(n), j), te, sig, j, j);
    for (const auto& e : g.scores) {
      if (e.selected) result.graph.set_edge(e.src, j, std::max(e.score, 1e-12));
      result.scores.push_back(e);
    }
  }
  return result;
}

std::optional<double> mmi_coefficient(const EntropyKernel& kernel, int n, int source, int target) {
  const std::vector<int> y{n + target};
  const std::vector<int> all = range(n);
  double denom = kernel.conditional(y, without(all, source));
  if (!(denom > 0.0)) return std::nullopt;
  return 1.0 - kernel.conditional(y, all) / denom;
}

BaselineResult mmi_graph(const data::Dataset& dataset, const EntropyEstimatorConfig& entropy, const SignificanceConfig& sig) {
  sig.validate();
  const int n = dataset.vertex_count();
  EntropyKernel kernel(markov_samples(dataset), entropy);
  BaselineResult result;
  result.graph = graph::WeightedDigraph(n);
  for (int i = 0; i < n; ++i) {
    const std::vector<int> y{n + i};
    const double hy = kernel.entropy(y);
    if (!(hy > 0.0)) {
      result.warnings.push_back(fmt::format("vertex {}: nonpositive entropy {:.4g}, target skipped", i, hy));
      continue;
    }
    // Set form C_{K->i} = 1 - h(Y | X_K) / h(Y); the gain of j is the increase.
    auto gain = [&](const std::vector<int>& k, int j, const EntropyKernel::Override& o) {
      if (contains(k, j)) return 0.0;
      return (kernel.conditional(y, k, o) - kernel.conditional(y, with(k, j), o)) / hy;
    };
    std::vector<int> pool;
    for (int j = 0; j < n; ++j) {
      if (j != i && !mmi_coefficient(kernel, n, j, i)) {
        result.warnings.push_back(fmt::format("pair {} -> {}: nonpositive denominator entropy, skipped", j, i));
        continue;
      }
      pool.push_back(j);
    }
    Greedy g = grow(kernel, pool, gain, sig, i, i);
    for (const auto& e : g.scores) {
      if (e.src == i) continue;
      if (e.selected) result.graph.set_edge(e.src, i, std::max(e.score, 1e-12));
      result.scores.push_back(e);
    }
  }
  return result;
}

// ---- PC ----

double fisher_z_pvalue(const Eigen::MatrixXd& correlation, int samples, int i, int j, const std::vector<int>& given) {
  std::vector<int> idx{i, j};
  idx.insert(idx.end(), given.begin(), given.end());
  const int d = static_cast<int>(idx.size());
  Eigen::MatrixXd sub(d, d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) sub(a, b) = correlation(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
  double r;
  if (given.empty()) {
    r = sub(0, 1);
  } else {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(sub);
    if (ldlt.info() != Eigen::Success) throw DegenerateDataError("singular correlation block in PC test");
    Eigen::MatrixXd prec = ldlt.solve(Eigen::MatrixXd::Identity(d, d));
    r = -prec(0, 1) / std::sqrt(prec(0, 0) * prec(1, 1));
  }
  if (!std::isfinite(r)) throw DegenerateDataError("non-finite partial correlation");
  r = std::clamp(r, -1.0 + 1e-15, 1.0 - 1e-15);
  const double dof = samples - static_cast<double>(given.size()) - 3.0;
  if (dof <= 0) throw InsufficientDataError("too few samples for the Fisher-z test");
  const double z = 0.5 * std::log((1.0 + r) / (1.0 - r)) * std::sqrt(dof);
  return std::erfc(std::abs(z) / std::numbers::sqrt2);
}

namespace {

// Subsets of `pool` with `size` elements, in lexicographic order.
void subsets(const std::vector<int>& pool, int size, std::size_t from, std::vector<int>& cur,
             const std::function<bool(const std::vector<int>&)>& visit, bool& stop) {
  if (stop) return;
  if (static_cast<int>(cur.size()) == size) {
    stop = visit(cur);
    return;
  }
  for (std::size_t k = from; k < pool.size() && !stop; ++k) {
    cur.push_back(pool[k]);
    subsets(pool, size, k + 1, cur, visit, stop);
    cur.pop_back();
  }
}

bool directed(const Marks& m, int a, int b) { return m(a, b) && !m(b, a); }
bool undirected(const Marks& m, int a, int b) { return m(a, b) && m(b, a); }
bool adjacent(const Marks& m, int a, int b) { return m(a, b) || m(b, a); }

// Is there a directed path from `from` to `to` using oriented edges only?
bool reaches(const Marks& m, int from, int to) {
  const int n = static_cast<int>(m.rows());
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  std::vector<int> stack{from};
  seen[static_cast<std::size_t>(from)] = true;
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    if (u == to) return true;
    for (int v = 0; v < n; ++v)
      if (directed(m, u, v) && !seen[static_cast<std::size_t>(v)]) {
        seen[static_cast<std::size_t>(v)] = true;
        stack.push_back(v);
      }
  }
  return false;
}

// Orients a - b as a -> b unless that closes a directed cycle.
bool orient(Marks& m, int a, int b) {
  if (!undirected(m, a, b)) return false;
  if (reaches(m, b, a)) return false;
  m(b, a) = false;
  return true;
}

}  // namespace

PcSkeleton pc_skeleton(const Eigen::MatrixXd& samples, double alpha, int max_conditioning) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("significance level must lie in (0, 1)");
  if (max_conditioning < 0) throw ConfigError("maximum conditioning size must be >= 0");
  const int n = static_cast<int>(samples.cols());
  const int m = static_cast<int>(samples.rows());
  if (m < 4) throw InsufficientDataError("PC needs at least 4 samples");
  Eigen::MatrixXd cov = covariance(samples);
  Eigen::VectorXd sd = cov.diagonal().array().sqrt();
  if ((sd.array() <= 0.0).any()) throw DegenerateDataError("PC input has a constant column");
  Eigen::MatrixXd corr = cov.array() / (sd * sd.transpose()).array();

  PcSkeleton sk;
  sk.adjacent = Marks::Constant(n, n, true);
  for (int i = 0; i < n; ++i) sk.adjacent(i, i) = false;
  sk.sepset.assign(static_cast<std::size_t>(n), std::vector<std::vector<int>>(static_cast<std::size_t>(n)));
  sk.separated.assign(static_cast<std::size_t>(n), std::vector<bool>(static_cast<std::size_t>(n), false));
  sk.max_p.assign(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n), 0.0));

  for (int level = 0; level <= max_conditioning; ++level) {
    // Stable variant: neighbourhoods frozen for the whole level.
    const Marks frozen = sk.adjacent;
    bool any = false;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j || !sk.adjacent(i, j)) continue;
        std::vector<int> pool;
        for (int k = 0; k < n; ++k)
          if (k != j && frozen(i, k)) pool.push_back(k);
        if (static_cast<int>(pool.size()) < level) continue;
        any = true;
        std::vector<int> cur;
        bool stop = false;
        subsets(pool, level, 0, cur,
                [&](const std::vector<int>& s) {
                  double p = fisher_z_pvalue(corr, m, i, j, s);
                  auto& mp = sk.max_p[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                  mp = std::max(mp, p);
                  sk.max_p[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = mp;
                  if (p > alpha) {
                    sk.adjacent(i, j) = sk.adjacent(j, i) = false;
                    sk.sepset[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = s;
                    sk.sepset[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = s;
                    sk.separated[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = true;
                    sk.separated[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = true;
                    return true;
                  }
                  return false;
                },
                stop);
      }
    if (!any) break;
  }
  return sk;
}

bool has_directed_cycle(const Marks& marks) {
  const int n = static_cast<int>(marks.rows());
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      if (directed(marks, a, b) && reaches(marks, b, a)) return true;
  return false;
}

Marks pc_orient(const PcSkeleton& skeleton) {
  Marks m = skeleton.adjacent;
  const int n = static_cast<int>(m.rows());
  // Colliders i -> k <- j.
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      if (adjacent(m, i, j)) continue;
      for (int k = 0; k < n; ++k) {
        if (k == i || k == j || !adjacent(skeleton.adjacent, i, k) || !adjacent(skeleton.adjacent, j, k)) continue;
        if (!skeleton.separated[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) continue;
        if (contains(skeleton.sepset[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], k)) continue;
        if (m(k, i) && !m(i, k)) continue;
        if (m(k, j) && !m(j, k)) continue;
        orient(m, i, k);
        orient(m, j, k);
      }
    }
  bool changed = true;
  while (changed) {
    changed = false;
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        if (a == b || !directed(m, a, b)) continue;
        // a -> b - c with a, c not adjacent: b -> c.
        for (int c = 0; c < n; ++c)
          if (c != a && c != b && undirected(m, b, c) && !adjacent(m, a, c)) changed |= orient(m, b, c);
      }
    for (int a = 0; a < n; ++a)
      for (int c = 0; c < n; ++c) {
        if (a == c || !undirected(m, a, c)) continue;
        // a -> b -> c with a - c: a -> c.
        for (int b = 0; b < n; ++b)
          if (directed(m, a, b) && directed(m, b, c)) {
            changed |= orient(m, a, c);
            break;
          }
      }
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        if (a == b || !undirected(m, a, b)) continue;
        // a - c -> b, a - d -> b, c and d not adjacent: a -> b.
        bool done = false;
        for (int c = 0; c < n && !done; ++c) {
          if (c == a || c == b || !undirected(m, a, c) || !directed(m, c, b)) continue;
          for (int d = c + 1; d < n && !done; ++d) {
            if (d == a || d == b || !undirected(m, a, d) || !directed(m, d, b) || adjacent(m, c, d)) continue;
            changed |= orient(m, a, b);
            done = true;
          }
        }
      }
  }
  return m;
}

BaselineResult pc_graph(const Eigen::MatrixXd& samples, double alpha, int max_conditioning) {
  PcSkeleton sk = pc_skeleton(samples, alpha, max_conditioning);
  Marks m = pc_orient(sk);
  const int n = static_cast<int>(samples.cols());
  BaselineResult result;
  result.graph = graph::WeightedDigraph(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double p = sk.max_p[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (m(i, j)) result.graph.set_edge(i, j, 1.0);
      result.scores.push_back(EdgeScore{i, j, m(i, j) ? 1.0 : 0.0, p, static_cast<bool>(m(i, j))});
    }
  return result;
}

BaselineResult pc_graph(const data::Dataset& dataset, double alpha, int max_conditioning) {
  return pc_graph(contemporaneous_samples(dataset), alpha, max_conditioning);
}

// ---- dispatch ----

Method parse_method(const std::string& name) {
  if (name == "gc") return Method::gc;
  if (name == "oce") return Method::oce;
  if (name == "mte") return Method::mte;
  if (name == "mmi") return Method::mmi;
  if (name == "pc") return Method::pc;
  throw ConfigError(fmt::format("unknown baseline method '{}'", name));
}

std::string method_name(Method m) {
  switch (m) {
    case Method::gc: return "gc";
    case Method::oce: return "oce";
    case Method::mte: return "mte";
    case Method::mmi: return "mmi";
    case Method::pc: return "pc";
  }
  return "?";
}

data::Dataset unperturbed_series(const data::Dataset& dataset) {
  data::Dataset out;
  for (std::size_t s : dataset.unperturbed_indices()) out.series.push_back(dataset.series[s]);
  if (out.series.empty()) throw ValidationError("dataset has no unperturbed series");
  out.ground_truth = dataset.ground_truth;
  out.prior = dataset.prior;
  return out;
}

BaselineResult run_baseline(const data::Dataset& input, const BaselineConfig& config) {
  SignificanceConfig sig{config.n_perm, config.alpha, config.seed};
  const data::Dataset dataset = unperturbed_series(input);
  switch (config.method) {
    case Method::gc: return granger_graph(dataset, GrangerConfig{config.lags, config.alpha, config.bonferroni});
    case Method::oce: return oce_graph(dataset, config.entropy, sig);
    case Method::mte: return mte_graph(dataset, config.entropy, sig);
    case Method::mmi: return mmi_graph(dataset, config.entropy, sig);
    case Method::pc: return pc_graph(dataset, config.alpha, config.max_conditioning);
  }
  throw ConfigError("unknown baseline method");
}

void write_scores_csv(const std::filesystem::path& path, const BaselineResult& result) {
  std::ofstream out(path);
  if (!out) throw ConfigError(fmt::format("cannot write {}", path.string()));
  out << "src,dst,score,p_value,selected\n";
  for (const auto& e : result.scores)
    out << e.src << ',' << e.dst << ',' << data::format_double(e.score) << ',' << data::format_double(e.p_value) << ','
        << (e.selected ? 1 : 0) << '\n';
}

}  // namespace ritini::baselines
