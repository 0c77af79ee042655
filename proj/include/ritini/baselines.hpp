#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ritini/dataset.hpp"
#include "ritini/graph.hpp"

// Classical static graph-inference methods: Granger causality, optimal
// causation entropy (OCE), multivariate transfer entropy (mTE), normalized
// multivariate mutual information (mMI) and the PC algorithm.
namespace ritini::baselines {

struct EntropyEstimatorConfig {
  enum class Kind { gaussian, knn };
  Kind kind = Kind::gaussian;
  double jitter = 1e-8;
  int k = 4;

  void validate() const;
};

struct SignificanceConfig {
  int n_perm = 100;
  double alpha = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Plug-in h(Z) = 1/2 log((2 pi e)^d det S) for samples in rows.
double gaussian_entropy(const Eigen::MatrixXd& samples, double jitter = 1e-8);
/// h(X | Y) = h(X, Y) - h(Y). Y may have zero columns.
double gaussian_conditional_entropy(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double jitter = 1e-8);
/// Kozachenko-Leonenko estimate with max-norm neighbour distances.
double knn_entropy(const Eigen::MatrixXd& samples, int k);
double conditional_entropy(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const EntropyEstimatorConfig& config);

/// Entropies of column subsets of one sample matrix. An override replaces
/// one column by other values (used for surrogate candidates).
struct ColumnOverride {
  int column = -1;
  const Eigen::VectorXd* values = nullptr;
};

class EntropyKernel {
 public:
  using Override = ColumnOverride;

  EntropyKernel(Eigen::MatrixXd samples, EntropyEstimatorConfig config);

  int samples() const { return static_cast<int>(data_.rows()); }
  const Eigen::MatrixXd& data() const { return data_; }
  double entropy(const std::vector<int>& columns, const Override& o = {}) const;
  double conditional(const std::vector<int>& target, const std::vector<int>& given, const Override& o = {}) const;

 private:
  Eigen::MatrixXd data_;
  EntropyEstimatorConfig config_;
  Eigen::MatrixXd cov_;
  Eigen::RowVectorXd mean_;
};

struct Significance {
  bool significant = false;
  double p_value = 1.0;
  double observed = 0.0;
};

/// Permutation test with circularly shifted copies of `candidate` as the null.
Significance permutation_significance(const std::function<double(const Eigen::VectorXd&)>& statistic,
                                      const Eigen::VectorXd& candidate, const SignificanceConfig& config);

/// Pooled one-step pairs over every series: columns [X_t (N), X_{t+1} (N)],
/// each column z-scored.
Eigen::MatrixXd markov_samples(const data::Dataset& dataset);
/// Pooled rows X_t over every series, z-scored.
Eigen::MatrixXd contemporaneous_samples(const data::Dataset& dataset);

struct EdgeScore {
  int src = 0;
  int dst = 0;
  double score = 0.0;
  double p_value = 1.0;
  bool selected = false;
};

struct BaselineResult {
  graph::WeightedDigraph graph;
  std::vector<EdgeScore> scores;
  std::vector<std::string> warnings;
};

struct GrangerConfig {
  int lags = 5;
  double alpha = 0.05;
  bool bonferroni = true;
};

BaselineResult granger_graph(const data::Dataset& dataset, const GrangerConfig& config = {});
BaselineResult oce_graph(const data::Dataset& dataset, const EntropyEstimatorConfig& entropy = {},
                         const SignificanceConfig& significance = {});
BaselineResult mte_graph(const data::Dataset& dataset, const EntropyEstimatorConfig& entropy = {},
                         const SignificanceConfig& significance = {});
BaselineResult mmi_graph(const data::Dataset& dataset, const EntropyEstimatorConfig& entropy = {},
                         const SignificanceConfig& significance = {});

/// C_{j->i} = 1 - h(Y_i | all X) / h(Y_i | X without j) on Markov samples.
/// Returns nothing (and the caller warns) when the denominator is not positive.
std::optional<double> mmi_coefficient(const EntropyKernel& kernel, int n, int source, int target);

/// Partially directed graph: mark(i, j) means an edge end i -> j exists.
/// Both marks set means undirected.
using Marks = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct PcSkeleton {
  Marks adjacent;
  std::vector<std::vector<std::vector<int>>> sepset;
  std::vector<std::vector<bool>> separated;
  std::vector<std::vector<double>> max_p;
};

/// p-value of the Fisher-z test of corr(i, j | S) = 0.
double fisher_z_pvalue(const Eigen::MatrixXd& correlation, int samples, int i, int j, const std::vector<int>& given);
PcSkeleton pc_skeleton(const Eigen::MatrixXd& samples, double alpha, int max_conditioning);
/// v-structures, then the three propagation rules to a fixed point. No
/// orientation that would close a directed cycle is applied.
Marks pc_orient(const PcSkeleton& skeleton);
bool has_directed_cycle(const Marks& marks);
BaselineResult pc_graph(const data::Dataset& dataset, double alpha = 0.05, int max_conditioning = 3);
/// PC on raw samples (rows) instead of a dataset.
BaselineResult pc_graph(const Eigen::MatrixXd& samples, double alpha, int max_conditioning);

enum class Method { gc, oce, mte, mmi, pc };
Method parse_method(const std::string& name);
std::string method_name(Method m);

struct BaselineConfig {
  Method method = Method::gc;
  double alpha = 0.05;
  int lags = 5;
  int max_conditioning = 3;
  int n_perm = 100;
  std::uint64_t seed = 0;
  EntropyEstimatorConfig entropy;
  bool bonferroni = true;
};

/// The unperturbed series only. Perturbed replicates repeat the same noise
/// draw, so pooling them would count one sample several times.
data::Dataset unperturbed_series(const data::Dataset& dataset);

/// Runs one method on the unperturbed series of `dataset`.
BaselineResult run_baseline(const data::Dataset& dataset, const BaselineConfig& config);

void write_scores_csv(const std::filesystem::path& path, const BaselineResult& result);

}  // namespace ritini::baselines
