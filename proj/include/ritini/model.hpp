#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "ritini/autodiff.hpp"
#include "ritini/dataset.hpp"
#include "ritini/graph.hpp"
#include "ritini/graph_json.hpp"

// Space-and-time attention graph ODE.
//
// Each vertex carries one scalar signal. For vertex i at time t the model
// forms m_j = sum_d l_d X(j, t - d*dt) over L lags, attends over the supported
// in-neighbours, s_i = sum_j alpha_ij m_j, projects g'_i = W s_i and integrates
// dX_i/dt = f(g'_i, t) with fixed-step RK4. Attention is recomputed at the left
// end of every observation interval and held fixed across it.
namespace ritini::model {

using ad::Matrix;
using ad::Var;

struct ModelConfig {
  int lags = 4;
  int hidden = 16;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named learnable arrays: projection (d x 1), temporal_logits (1 x L),
/// att_w1 (2L x d), att_b1 (1 x d), att_w2 (d x 1), dyn_w1 (d x d),
/// dyn_wt (1 x d), dyn_b1 (1 x d), dyn_w2 (d x 1), dyn_b2 (1 x 1).
class ModelParameters {
 public:
  ModelParameters() = default;
  /// Uniform [-init_scale, init_scale] initialization from `seed`.
  ModelParameters(const ModelConfig& config, std::uint64_t seed, double init_scale = 0.1);

  const ModelConfig& config() const { return config_; }
  const ad::ParameterStore& store() const { return store_; }
  ad::ParameterStore& store() { return store_; }
  const Matrix& get(const std::string& name) const { return store_.get(name); }
  Matrix& get(const std::string& name) { return store_.get(name); }

  /// Softmax of the temporal logits (sums to 1).
  Eigen::VectorXd temporal_attention() const;

  nlohmann::json to_json() const;
  static ModelParameters from_json(const nlohmann::json& j);
  friend bool operator==(const ModelParameters&, const ModelParameters&) = default;

 private:
  ModelConfig config_;
  ad::ParameterStore store_;
};

/// Parameters bound as leaves (or constants) on one tape.
struct BoundParameters {
  ModelConfig config;
  Var projection, temporal_logits, att_w1, att_b1, att_w2, dyn_w1, dyn_wt, dyn_b1, dyn_w2, dyn_b2;
  std::vector<Var> leaves;

  static BoundParameters leaves_of(ad::Tape& tape, const ModelParameters& params);
  static BoundParameters constants_of(ad::Tape& tape, const ModelParameters& params);
};

using Mask = ad::Mask;

/// K stacked windows. `pairs` has one row per (window, i, j) holding
/// [X(i, t - d) for d < L, X(j, t - d) for d < L].
Matrix pair_features(const std::vector<Matrix>& windows);
/// Attention rows (window k, vertex i) over columns j, masked by `support`.
Var attention_block(const BoundParameters& p, const Matrix& pairs, const Mask& tiled_support);
/// Derivative for K windows: state K x N (lag 0), lagged K x N constants for
/// d = 1..L-1, attention K*N x N, time column K*N x 1 (normalized time).
Var dynamics_block(const BoundParameters& p, const Var& state, const std::vector<Matrix>& lagged, const Var& attention,
                   const Matrix& time_column);

/// Single-window forms of the blocks above. `window` is L x N with row d = X(., t - d*dt).
Eigen::MatrixXd compute_attention(const ModelParameters& params, const Eigen::MatrixXd& window, const Mask& support);
/// g' for every vertex (N x d) with attention held fixed.
Eigen::MatrixXd aggregate(const ModelParameters& params, const Eigen::MatrixXd& attention, const Eigen::MatrixXd& window);
/// f(g'_i, t) per vertex.
Eigen::VectorXd ode_rhs(const ModelParameters& params, const Eigen::MatrixXd& attention, const Eigen::MatrixXd& window,
                        double normalized_time);

/// Observed samples plus solver outputs, queried by time with linear
/// interpolation and constant extension before the first sample.
class HistoryBuffer {
 public:
  HistoryBuffer() = default;
  explicit HistoryBuffer(int n) : n_(n) {}
  /// Appends a sample; times must be nondecreasing (an equal time overwrites).
  void push(double t, const Eigen::RowVectorXd& x);
  Eigen::RowVectorXd at(double t) const;
  /// L x N window ending at t with spacing dt.
  Eigen::MatrixXd window(double t, int lags, double dt) const;
  bool empty() const { return times_.empty(); }
  double last_time() const { return times_.back(); }
  /// Drops every sample later than t.
  void truncate_after(double t);

 private:
  int n_ = 0;
  std::vector<double> times_;
  std::vector<Eigen::RowVectorXd> values_;
};

/// Classical fixed-step RK4 from t0 to t1. `on_step(t, x)` is called after every
/// step (so solver outputs can be appended to a history buffer). Returns the
/// states at the `steps` internal grid points, the last one at t1.
std::vector<Eigen::VectorXd> ode_solve(const std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>& rhs,
                                       const Eigen::VectorXd& x0, double t0, double t1, int steps,
                                       const std::function<void(double, const Eigen::VectorXd&)>& on_step = {});

/// Composite objective on plain matrices: sum over vertices of the mean
/// squared error over rows, plus lambda1 * mean_t ||alpha(t) - target||_F and
/// lambda2 * mean_t |alpha(t)|_1.
double loss(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& observed, const std::vector<Eigen::MatrixXd>& attention,
            const Eigen::MatrixXd& prior_target, double lambda1, double lambda2);

struct TrainConfig {
  ModelConfig model;
  double lambda1 = 0.1;
  double lambda2 = 0.01;
  int epochs = 500;
  int solver_steps = 4;
  /// Weight of the perturbed-series error term.
  double perturbation_weight = 1.0;
  /// Drop perturbed series entirely (ablation).
  bool use_perturbations = true;
  /// Z-score every vertex on the training data before fitting.
  bool normalize = true;
  std::uint64_t seed = 0;
  ad::OptimizerConfig optimizer;
};

/// Per-vertex affine map to the model's internal units.
struct Normalization {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd inverse(const Eigen::MatrixXd& z) const;
};

/// Constant inputs of a teacher-forced training step: every observation
/// interval whose two ends are training points, across all used series.
struct TrainingBatch {
  int vertices = 0;
  int windows = 0;
  Matrix pairs;              // windows*N*N x 2L
  Mask tiled_support;        // windows*N x N
  Matrix start;              // windows x N (normalized state at the left end)
  Matrix target;             // windows x N (normalized state at the right end)
  Matrix row_weight;         // windows x N, per-window weight of the squared error
  // lagged[step][stage][d-1]: windows x N values at stage time minus d*dt.
  std::vector<std::vector<std::vector<Matrix>>> lagged;
  // time[step][stage]: windows*N x 1 normalized stage times.
  std::vector<std::vector<Matrix>> time;
  double interval = 1.0;     // observation spacing dt
  std::vector<double> snapshot_times;  // left ends of the reference-series windows
  std::vector<int> snapshot_windows;   // their window indices
};

struct TrainedModel {
  ModelParameters params;
  TrainConfig config;
  graph::PriorGraph prior;
  Normalization normalization;
  double time_origin = 0.0;
  double time_span = 1.0;
  double dt = 1.0;
  std::vector<std::size_t> train_indices;
  graph::AttentionTrajectory attention;
  std::vector<double> loss_history;

  double normalized_time(double t) const { return (t - time_origin) / time_span; }
  Mask support() const { return prior.support(); }
};

/// Scalar pieces of the objective from one forward pass.
struct LossTerms {
  Var total;
  double mse = 0.0;        // weighted squared-error part
  double frobenius = 0.0;  // mean_k ||alpha_k - target||_F
  double l1 = 0.0;         // mean_k |alpha_k|_1
};

TrainingBatch make_batch(const data::Dataset& dataset, const graph::PriorGraph& prior, const TrainedModel& frame,
                         const std::vector<std::size_t>& train_indices);
/// Teacher-forced forward pass over a batch, on the given tape.
LossTerms batch_loss(const BoundParameters& p, const TrainingBatch& batch, const Eigen::MatrixXd& prior_target,
                     double lambda1, double lambda2, int solver_steps);

/// `train_indices` are grid indices shared by all series (empty: every index).
TrainedModel train(const data::Dataset& dataset, const graph::PriorGraph& prior, const TrainConfig& config,
                   std::vector<std::size_t> train_indices = {});

/// Predictions at query times (original units), integrating from the nearest
/// preceding training observation of series `series_index`.
Eigen::MatrixXd predict(const TrainedModel& model, const data::Dataset& dataset, const std::vector<double>& query_times,
                        std::size_t series_index = 0);

struct ExtractedGraphs {
  graph::AttentionTrajectory attention;
  graph::DynamicGraph dynamic;
  graph::WeightedDigraph static_graph;
};
ExtractedGraphs extract_graphs(const TrainedModel& model, double threshold = 0.1);

/// Variance of the lag index under the temporal attention distribution.
double hysteresis_index(const ModelParameters& params);
double hysteresis_index(const TrainedModel& model);

struct SensitivityConfig {
  double epsilon = 0.5;
  /// Intervals rolled out after each injection (0: the lag count).
  int horizon = 0;
  /// Number of injection times spread over the training span.
  int starts = 8;
  std::size_t series_index = 0;
};

/// Pearson correlation between the rollout response of each supported
/// out-neighbour j of `vertex` and the time-averaged attention alpha_j,vertex.
double sensitivity_check(const TrainedModel& model, const data::Dataset& dataset, int vertex, const SensitivityConfig& config = {});
/// Response per vertex (sum of |perturbed - unperturbed| over the horizons).
Eigen::VectorXd sensitivity_profile(const TrainedModel& model, const data::Dataset& dataset, int vertex,
                                    const SensitivityConfig& config = {});

/// Negative log posterior under a Gaussian likelihood with noise variance
/// sigma2 over `count` residuals and a Boltzmann prior over graphs with
/// energy alpha_mix * F + (1 - alpha_mix) * L1 at inverse temperature
/// beta * count / (2 sigma2). `log_partition` is the prior's log normalizer.
double negative_log_posterior(double mse, std::size_t count, double sigma2, double frobenius, double l1, double beta,
                              double alpha_mix, double log_partition);

nlohmann::json to_json(const TrainedModel& model);
TrainedModel model_from_json(const nlohmann::json& j);
void save_model(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_model(const std::filesystem::path& path);

}  // namespace ritini::model
