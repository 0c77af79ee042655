#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ritini/errors.hpp"

// Reverse-mode differentiation over dense double matrices.
//
// A Tape records every value produced by the supported operations together
// with a closure that pushes the node's gradient to its operands. Nodes are
// appended in evaluation order, so reverse iteration is a valid topological
// order and the graph is acyclic by construction.
namespace ritini::ad {

using Matrix = Eigen::MatrixXd;
using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var constant(Matrix value);
  Var constant(double value);
  /// Differentiable input (parameter or probe point).
  Var leaf(Matrix value);

  /// Seeds d(out)/d(out) = 1 and accumulates gradients into every node that
  /// depends on a leaf. `out` must be 1x1.
  void backward(const Var& out);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix& grad(int id) const;
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` to the gradient of node `id` (allocating it on first use).
  void accumulate(int id, const Matrix& g);

  /// Records a new node. Throws NonFiniteError naming `op` if the value is not finite.
  Var record(Matrix value, std::string_view op, std::initializer_list<Var> parents, Backward backward);
  Var record(Matrix value, std::string_view op, const std::vector<Var>& parents, Backward backward);

  Matrix& grad_slot(int id);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::string_view op;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };

  std::vector<Node> nodes_;
};

// Elementwise and linear-algebra operations. Operands must live on the same tape.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// s must be 1x1; returns s * a.
Var scalar_mul(const Var& s, const Var& a);
/// Adds a 1 x cols row vector to every row of a.
Var add_row(const Var& a, const Var& row);
Var tanh(const Var& a);
Var exp(const Var& a);
Var sqrt(const Var& a);  // derivative taken as 0 at 0
Var abs(const Var& a);
Var square(const Var& a);
Var transpose(const Var& a);
/// Row-wise softmax restricted to entries where mask is true; masked entries are exactly 0.
Var masked_softmax_rows(const Var& scores, const Mask& mask);
/// Softmax over all entries of a.
Var softmax(const Var& a);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice(const Var& a, Eigen::Index row, Eigen::Index col, Eigen::Index rows, Eigen::Index cols);
/// Each row of a repeated `times` times consecutively.
Var repeat_rows(const Var& a, Eigen::Index times);
/// Sum of each row, as a column vector.
Var row_sum(const Var& a);
/// Row-major reinterpretation to rows x cols.
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);
Var sum(const Var& a);
Var mean(const Var& a);
Var squared_norm(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }

/// Named dense parameters (the leaves of a model).
class ParameterStore {
 public:
  void add(const std::string& name, Matrix value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Matrix& get(const std::string& name) const;
  Matrix& get(const std::string& name);
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t scalar_count() const;

  /// Creates one leaf per parameter, in insertion order.
  std::vector<Var> bind(Tape& tape) const;
  /// Throws NonFiniteError when any value is not finite.
  void check_finite() const;

  nlohmann::json to_json() const;
  static ParameterStore from_json(const nlohmann::json& j);

  friend bool operator==(const ParameterStore& a, const ParameterStore& b);

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::map<std::string, std::size_t> index_;
};

/// Gradients of the bound leaves, in store order (zero where no path exists).
std::vector<Matrix> gradients(const Tape& tape, const std::vector<Var>& leaves);

/// Scales all gradients so their joint L2 norm is at most max_norm. Returns the norm before clipping.
double clip_global_norm(std::vector<Matrix>& grads, double max_norm);

struct OptimizerConfig {
  enum class Kind { momentum, adam };
  Kind kind = Kind::momentum;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 10.0;
};

/// Gradient-descent update rule with per-parameter state.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {}) : config_(config) {}
  void step(ParameterStore& store, std::vector<Matrix> grads);
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
  long steps_ = 0;
};

using ScalarFunction = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Max over coordinates of |g_ad - g_fd| / max(1, |g_ad|), with central
/// differences of step h.
double gradient_check(const ScalarFunction& f, const std::vector<Matrix>& point, double h = 1e-6);
double gradient_check(const std::function<Var(Tape&, const Var&)>& f, const Matrix& point, double h = 1e-6);

}  // namespace ritini::ad
