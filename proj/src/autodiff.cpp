#include "ritini/autodiff.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace ritini::ad {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw Error("operation on an unbound variable");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw Error("operands live on different tapes");
  return t;
}

void require_same_shape(const Var& a, const Var& b, std::string_view op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw SizeMismatchError(fmt::format("{}: shapes {}x{} and {}x{} differ", op, a.rows(), a.cols(), b.rows(), b.cols()));
  }
}

Matrix row_major_reshape(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  RowMajor rm = m;
  return Eigen::Map<RowMajor>(rm.data(), rows, cols);
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw SizeMismatchError(fmt::format("expected a scalar, got {}x{}", v.rows(), v.cols()));
  return v(0, 0);
}

Var Tape::constant(Matrix value) { return record(std::move(value), "constant", {}, nullptr); }

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::leaf(Matrix value) {
  Var v = record(std::move(value), "leaf", {}, nullptr);
  nodes_.back().requires_grad = true;
  return v;
}

Var Tape::record(Matrix value, std::string_view op, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), op, std::vector<Var>(parents), std::move(backward));
}

Var Tape::record(Matrix value, std::string_view op, const std::vector<Var>& parents, Backward backward) {
  // A sum is finite only if every entry is (overflow of the sum itself is
  // treated as a blow-up as well).
  if (!std::isfinite(value.sum())) {
    throw NonFiniteError(fmt::format("non-finite value produced by '{}' at node {}", op, nodes_.size()));
  }
  bool needs = false;
  for (const auto& p : parents) needs = needs || requires_grad(p.id());
  Node node;
  node.value = std::move(value);
  node.op = op;
  node.requires_grad = needs;
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Matrix& Tape::grad(int id) const {
  static const Matrix empty;
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.has_grad ? n.grad : empty;
}

Matrix& Tape::grad_slot(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(int id, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  if (n.has_grad) {
    n.grad += g;
  } else {
    n.grad = g;
    n.has_grad = true;
  }
}

void Tape::backward(const Var& out) {
  if (out.tape() != this) throw Error("backward called on a variable from another tape");
  if (value(out.id()).size() != 1) {
    throw SizeMismatchError(fmt::format("backward needs a scalar output, got {}x{}", value(out.id()).rows(), value(out.id()).cols()));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  if (!requires_grad(out.id())) return;
  grad_slot(out.id())(0, 0) = 1.0;
  for (int id = out.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.has_grad && n.backward) n.backward(*this, id);
  }
}

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw SizeMismatchError(fmt::format("matmul: {}x{} times {}x{}", a.rows(), a.cols(), b.rows(), b.cols()));
  }
  return t.record(a.value() * b.value(), "matmul", {a, b}, [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (a.requires_grad()) tp.accumulate(a.id(), g * b.value().transpose());
    if (b.requires_grad()) tp.accumulate(b.id(), a.value().transpose() * g);
  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "add");
  return t.record(a.value() + b.value(), "add", {a, b}, [a, b](Tape& tp, int self) {
    tp.accumulate(a.id(), tp.grad(self));
    tp.accumulate(b.id(), tp.grad(self));
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "sub");
  return t.record(a.value() - b.value(), "sub", {a, b}, [a, b](Tape& tp, int self) {
    tp.accumulate(a.id(), tp.grad(self));
    tp.accumulate(b.id(), -tp.grad(self));
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "mul");
  return t.record(a.value().cwiseProduct(b.value()), "mul", {a, b}, [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (a.requires_grad()) tp.accumulate(a.id(), g.cwiseProduct(b.value()));
    if (b.requires_grad()) tp.accumulate(b.id(), g.cwiseProduct(a.value()));
  });
}

Var scale(const Var& a, double s) {
  Tape& t = tape_of(a);
  return t.record(a.value() * s, "scale", {a}, [a, s](Tape& tp, int self) { tp.accumulate(a.id(), tp.grad(self) * s); });
}

Var add_scalar(const Var& a, double s) {
  Tape& t = tape_of(a);
  return t.record(a.value().array() + s, "add_scalar", {a}, [a](Tape& tp, int self) { tp.accumulate(a.id(), tp.grad(self)); });
}

Var scalar_mul(const Var& s, const Var& a) {
  Tape& t = tape_of(s, a);
  const double sv = s.scalar();
  return t.record(a.value() * sv, "scalar_mul", {s, a}, [s, a, sv](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (s.requires_grad()) tp.accumulate(s.id(), Matrix::Constant(1, 1, g.cwiseProduct(a.value()).sum()));
    if (a.requires_grad()) tp.accumulate(a.id(), g * sv);
  });
}

Var add_row(const Var& a, const Var& row) {
  Tape& t = tape_of(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw SizeMismatchError(fmt::format("add_row: row is {}x{}, matrix has {} columns", row.rows(), row.cols(), a.cols()));
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.record(std::move(out), "add_row", {a, row}, [a, row](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.accumulate(a.id(), g);
    if (row.requires_grad()) tp.accumulate(row.id(), g.colwise().sum());
  });
}

Var tanh(const Var& a) {
  Tape& t = tape_of(a);
  // tanh(x) = 1 - 2 / (exp(2x) + 1), using Eigen's vectorized exp; large
  // arguments are clamped where tanh is already +-1 in double precision.
  Matrix y = 1.0 - 2.0 / ((2.0 * a.value().array().min(40.0).max(-40.0)).exp() + 1.0);
  return t.record(std::move(y), "tanh", {a}, [a](Tape& tp, int self) {
    const Matrix& yv = tp.value(self);
    tp.accumulate(a.id(), tp.grad(self).cwiseProduct((1.0 - yv.array().square()).matrix()));
  });
}

Var exp(const Var& a) {
  Tape& t = tape_of(a);
  return t.record(a.value().array().exp(), "exp", {a}, [a](Tape& tp, int self) {
    tp.accumulate(a.id(), tp.grad(self).cwiseProduct(tp.value(self)));
  });
}

Var sqrt(const Var& a) {
  Tape& t = tape_of(a);
  if ((a.value().array() < 0.0).any()) throw NonFiniteError("sqrt of a negative value");
  return t.record(a.value().array().sqrt(), "sqrt", {a}, [a](Tape& tp, int self) {
    // Subgradient 0 where the value is exactly 0.
    const Matrix& y = tp.value(self);
    Matrix g = Matrix::Zero(y.rows(), y.cols());
    for (Eigen::Index k = 0; k < y.size(); ++k) {
      if (y(k) > 0.0) g(k) = tp.grad(self)(k) / (2.0 * y(k));
    }
    tp.accumulate(a.id(), g);
  });
}

Var abs(const Var& a) {
  Tape& t = tape_of(a);
  return t.record(a.value().cwiseAbs(), "abs", {a}, [a](Tape& tp, int self) {
    const Matrix sign = a.value().unaryExpr([](double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); });
    tp.accumulate(a.id(), tp.grad(self).cwiseProduct(sign));
  });
}

Var square(const Var& a) {
  Tape& t = tape_of(a);
  return t.record(a.value().array().square(), "square", {a}, [a](Tape& tp, int self) {
    tp.accumulate(a.id(), 2.0 * tp.grad(self).cwiseProduct(a.value()));
  });
}

Var transpose(const Var& a) {
  Tape& t = tape_of(a);
  return t.record(a.value().transpose(), "transpose", {a}, [a](Tape& tp, int self) {
    tp.accumulate(a.id(), tp.grad(self).transpose());
  });
}

Var masked_softmax_rows(const Var& scores, const Mask& mask) {
  Tape& t = tape_of(scores);
  const Matrix& s = scores.value();
  if (mask.rows() != s.rows() || mask.cols() != s.cols()) {
    throw SizeMismatchError(fmt::format("masked_softmax_rows: mask {}x{} vs scores {}x{}", mask.rows(), mask.cols(), s.rows(), s.cols()));
  }
  Matrix y = Matrix::Zero(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    double hi = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      if (mask(r, c)) hi = std::max(hi, s(r, c));
    }
    if (!std::isfinite(hi)) throw ConfigError(fmt::format("masked softmax row {} has no unmasked entry", r));
    double z = 0.0;
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      if (mask(r, c)) {
        y(r, c) = std::exp(s(r, c) - hi);
        z += y(r, c);
      }
    }
    y.row(r) /= z;
  }
  return t.record(std::move(y), "masked_softmax_rows", {scores}, [scores](Tape& tp, int self) {
    const Matrix& yv = tp.value(self);
    const Matrix& g = tp.grad(self);
    // Masked entries have y = 0, so they receive zero gradient automatically.
    const Eigen::VectorXd dot = yv.cwiseProduct(g).rowwise().sum();
    Matrix dg = yv.cwiseProduct(g.colwise() - dot);
    tp.accumulate(scores.id(), dg);
  });
}

Var softmax(const Var& a) {
  Tape& t = tape_of(a);
  const double hi = a.value().maxCoeff();
  Matrix y = (a.value().array() - hi).exp();
  y /= y.sum();
  return t.record(std::move(y), "softmax", {a}, [a](Tape& tp, int self) {
    const Matrix& yv = tp.value(self);
    const Matrix& g = tp.grad(self);
    const double dot = yv.cwiseProduct(g).sum();
    tp.accumulate(a.id(), yv.cwiseProduct((g.array() - dot).matrix()));
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw EmptyInputError("concat_cols of nothing");
  Tape& t = tape_of(parts.front());
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.tape() != &t) throw Error("operands live on different tapes");
    if (p.rows() != parts.front().rows()) throw SizeMismatchError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(parts.front().rows(), cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t.record(std::move(out), "concat_cols", parts, [parts](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Eigen::Index c0 = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) tp.accumulate(p.id(), g.middleCols(c0, p.cols()));
      c0 += p.cols();
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw EmptyInputError("concat_rows of nothing");
  Tape& t = tape_of(parts.front());
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.tape() != &t) throw Error("operands live on different tapes");
    if (p.cols() != parts.front().cols()) throw SizeMismatchError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, parts.front().cols());
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t.record(std::move(out), "concat_rows", parts, [parts](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Eigen::Index r0 = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) tp.accumulate(p.id(), g.middleRows(r0, p.rows()));
      r0 += p.rows();
    }
  });
}

Var slice(const Var& a, Eigen::Index row, Eigen::Index col, Eigen::Index rows, Eigen::Index cols) {
  Tape& t = tape_of(a);
  if (row < 0 || col < 0 || row + rows > a.rows() || col + cols > a.cols()) {
    throw SizeMismatchError(fmt::format("slice [{}:{}, {}:{}] outside {}x{}", row, row + rows, col, col + cols, a.rows(), a.cols()));
  }
  return t.record(a.value().block(row, col, rows, cols), "slice", {a}, [a, row, col, rows, cols](Tape& tp, int self) {
    tp.grad_slot(a.id()).block(row, col, rows, cols) += tp.grad(self);
  });
}

Var repeat_rows(const Var& a, Eigen::Index times) {
  Tape& t = tape_of(a);
  Matrix out(a.rows() * times, a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index k = 0; k < times; ++k) out.row(r * times + k) = a.value().row(r);
  }
  return t.record(std::move(out), "repeat_rows", {a}, [a, times](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix acc = Matrix::Zero(a.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      for (Eigen::Index k = 0; k < times; ++k) acc.row(r) += g.row(r * times + k);
    }
    tp.accumulate(a.id(), acc);
  });
}

Var row_sum(const Var& a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().rowwise().sum();
  return t.record(std::move(out), "row_sum", {a}, [a](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.accumulate(a.id(), g.col(0).replicate(1, a.cols()));
  });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  Tape& t = tape_of(a);
  if (rows * cols != a.value().size()) {
    throw SizeMismatchError(fmt::format("reshape {}x{} to {}x{}", a.rows(), a.cols(), rows, cols));
  }
  return t.record(row_major_reshape(a.value(), rows, cols), "reshape", {a}, [a](Tape& tp, int self) {
    tp.accumulate(a.id(), row_major_reshape(tp.grad(self), a.rows(), a.cols()));
  });
}

Var sum(const Var& a) {
  Tape& t = tape_of(a);
  return t.record(Matrix::Constant(1, 1, a.value().sum()), "sum", {a}, [a](Tape& tp, int self) {
    tp.accumulate(a.id(), Matrix::Constant(a.rows(), a.cols(), tp.grad(self)(0, 0)));
  });
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw EmptyInputError("mean of an empty matrix");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var squared_norm(const Var& a) {
  Tape& t = tape_of(a);
  return t.record(Matrix::Constant(1, 1, a.value().squaredNorm()), "squared_norm", {a}, [a](Tape& tp, int self) {
    tp.accumulate(a.id(), 2.0 * tp.grad(self)(0, 0) * a.value());
  });
}

void ParameterStore::add(const std::string& name, Matrix value) {
  if (index_.count(name)) throw ValidationError(fmt::format("parameter '{}' already exists", name));
  index_[name] = names_.size();
  names_.push_back(name);
  values_.push_back(std::move(value));
}

const Matrix& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError(fmt::format("unknown parameter '{}'", name));
  return values_[it->second];
}

Matrix& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError(fmt::format("unknown parameter '{}'", name));
  return values_[it->second];
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

std::vector<Var> ParameterStore::bind(Tape& tape) const {
  std::vector<Var> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.push_back(tape.leaf(v));
  return out;
}

void ParameterStore::check_finite() const {
  for (std::size_t k = 0; k < values_.size(); ++k) {
    if (!values_[k].allFinite()) throw NonFiniteError(fmt::format("parameter '{}' is not finite", names_[k]));
  }
}

nlohmann::json ParameterStore::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t k = 0; k < values_.size(); ++k) {
    const RowMajor rm = values_[k];
    std::vector<double> data(rm.data(), rm.data() + rm.size());
    out.push_back({{"name", names_[k]}, {"rows", rm.rows()}, {"cols", rm.cols()}, {"data", data}});
  }
  return out;
}

ParameterStore ParameterStore::from_json(const nlohmann::json& j) {
  ParameterStore store;
  try {
    for (const auto& p : j) {
      const auto rows = p.at("rows").get<Eigen::Index>();
      const auto cols = p.at("cols").get<Eigen::Index>();
      auto data = p.at("data").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
        throw ParseError(fmt::format("parameter '{}' has {} values for a {}x{} shape", p.at("name").get<std::string>(), data.size(), rows, cols));
      }
      Matrix m = Eigen::Map<RowMajor>(data.data(), rows, cols);
      store.add(p.at("name").get<std::string>(), std::move(m));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(fmt::format("malformed parameter checkpoint: {}", ex.what()));
  }
  return store;
}

bool operator==(const ParameterStore& a, const ParameterStore& b) {
  if (a.names_ != b.names_) return false;
  for (std::size_t k = 0; k < a.values_.size(); ++k) {
    if (a.values_[k].rows() != b.values_[k].rows() || a.values_[k].cols() != b.values_[k].cols()) return false;
    if (a.values_[k] != b.values_[k]) return false;
  }
  return true;
}

std::vector<Matrix> gradients(const Tape& tape, const std::vector<Var>& leaves) {
  std::vector<Matrix> out;
  out.reserve(leaves.size());
  for (const auto& v : leaves) {
    const Matrix& g = tape.grad(v.id());
    out.push_back(g.size() == 0 ? Matrix::Zero(v.rows(), v.cols()) : g);
  }
  return out;
}

double clip_global_norm(std::vector<Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    for (auto& g : grads) g *= max_norm / norm;
  }
  return norm;
}

void Optimizer::step(ParameterStore& store, std::vector<Matrix> grads) {
  if (grads.size() != store.size()) throw SizeMismatchError("gradient count differs from parameter count");
  clip_global_norm(grads, config_.clip_norm);
  if (first_.empty()) {
    for (const auto& name : store.names()) {
      first_.push_back(Matrix::Zero(store.get(name).rows(), store.get(name).cols()));
      second_.push_back(Matrix::Zero(store.get(name).rows(), store.get(name).cols()));
    }
  }
  ++steps_;
  const auto& names = store.names();
  for (std::size_t k = 0; k < names.size(); ++k) {
    Matrix& w = store.get(names[k]);
    if (config_.kind == OptimizerConfig::Kind::momentum) {
      first_[k] = config_.momentum * first_[k] + grads[k];
      w -= config_.learning_rate * first_[k];
    } else {
      first_[k] = config_.beta1 * first_[k] + (1.0 - config_.beta1) * grads[k];
      second_[k] = config_.beta2 * second_[k] + (1.0 - config_.beta2) * grads[k].cwiseAbs2();
      const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
      const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
      w.array() -= config_.learning_rate * (first_[k].array() / c1) / ((second_[k].array() / c2).sqrt() + config_.epsilon);
    }
  }
  store.check_finite();
}

double gradient_check(const ScalarFunction& f, const std::vector<Matrix>& point, double h) {
  if (h < 1e-7 || h > 1e-4) throw ValidationError(fmt::format("finite-difference step {} outside [1e-7, 1e-4]", h));
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& p : point) leaves.push_back(tape.leaf(p));
    Var out = f(tape, leaves);
    tape.backward(out);
    analytic = gradients(tape, leaves);
  }
  auto evaluate = [&](const std::vector<Matrix>& at) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& p : at) leaves.push_back(tape.constant(p));
    const double v = f(tape, leaves).scalar();
    if (!std::isfinite(v)) throw NonFiniteError("function value is not finite at a probe point");
    return v;
  };
  double worst = 0.0;
  std::vector<Matrix> probe = point;
  for (std::size_t k = 0; k < point.size(); ++k) {
    for (Eigen::Index idx = 0; idx < point[k].size(); ++idx) {
      const double orig = point[k](idx);
      probe[k](idx) = orig + h;
      const double up = evaluate(probe);
      probe[k](idx) = orig - h;
      const double down = evaluate(probe);
      probe[k](idx) = orig;
      const double fd = (up - down) / (2.0 * h);
      const double ad = analytic[k](idx);
      worst = std::max(worst, std::abs(ad - fd) / std::max(1.0, std::abs(ad)));
    }
  }
  return worst;
}

double gradient_check(const std::function<Var(Tape&, const Var&)>& f, const Matrix& point, double h) {
  return gradient_check([&f](Tape& t, const std::vector<Var>& v) { return f(t, v.front()); }, std::vector<Matrix>{point}, h);
}

}  // namespace ritini::ad
