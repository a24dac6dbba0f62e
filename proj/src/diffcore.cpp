#include "a2kt/diffcore.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include "a2kt/error.hpp"

namespace a2kt {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Matrix& m) {
  return ConstMap(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
}
MutMap view(Matrix& m) {
  return MutMap(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
}

[[noreturn]] void shape_fail(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                   b.shape_string());
}

void require_same_tape(Var a, Var b) {
  if (a.tape() != b.tape() || a.tape() == nullptr) {
    throw ContractError("operands recorded on different tapes");
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged row in matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

double Matrix::item() const {
  if (rows_ != 1 || cols_ != 1) throw ShapeError("item() on non-scalar " + shape_string());
  return data_[0];
}

std::string Matrix::shape_string() const {
  std::ostringstream os;
  os << rows_ << "x" << cols_;
  return os.str();
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) shape_fail("matmul", a, b);
  Matrix out(a.rows(), b.cols());
  if (a.cols() == 0) return out;
  view(out).noalias() = view(a) * view(b);
  return out;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) shape_fail("matmul_at_b", a, b);
  Matrix out(a.cols(), b.cols());
  if (a.rows() == 0) return out;
  view(out).noalias() = view(a).transpose() * view(b);
  return out;
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) shape_fail("matmul_a_bt", a, b);
  Matrix out(a.rows(), b.rows());
  if (a.cols() == 0) return out;
  view(out).noalias() = view(a) * view(b).transpose();
  return out;
}

void softmax_rows_inplace(Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    if (r.empty()) continue;
    const double mx = *std::max_element(r.begin(), r.end());
    double total = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      total += v;
    }
    for (double& v : r) v /= total;
  }
}

bool all_finite(const Matrix& m) {
  return std::all_of(m.values().begin(), m.values().end(), [](double v) { return std::isfinite(v); });
}

double sum_of_squares(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return s;
}

// ---------------------------------------------------------------------------
// Tape

const Matrix& Var::value() const { return tape_->value(id_); }

Matrix Var::grad() const {
  if (tape_->has_grad(id_)) return tape_->raw_grad(id_);
  const Matrix& v = value();
  return Matrix(v.rows(), v.cols());
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.constant = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<std::size_t> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.constant = std::all_of(parents.begin(), parents.end(),
                           [this](std::size_t p) { return nodes_[p].constant; });
  if (!n.constant) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (n.constant) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
    return;
  }
  auto dst = n.grad.values();
  auto src = g.values();
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
}

void Tape::accumulate(std::size_t id, Matrix&& g) {
  Node& n = nodes_[id];
  if (n.constant) return;
  if (!n.has_grad) {
    n.grad = std::move(g);
    n.has_grad = true;
    return;
  }
  auto dst = n.grad.values();
  auto src = g.values();
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw ContractError("backward root belongs to another tape");
  const Matrix& rv = nodes_[root.id()].value;
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw ContractError("backward requires a 1x1 root, got " + rv.shape_string());
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Matrix();
  }
  if (nodes_[root.id()].constant) return;
  nodes_[root.id()].grad = Matrix::scalar(1.0);
  nodes_[root.id()].has_grad = true;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.backward) continue;
    // Copy the gradient so the callback may accumulate into any node safely.
    const Matrix g = n.grad;
    n.backward(*this, g);
  }
}

// ---------------------------------------------------------------------------
// Operations

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = *a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(matmul(a.value(), b.value()), {ia, ib}, [ia, ib](Tape& tp, const Matrix& g) {
    if (!tp.is_constant(ia)) tp.accumulate(ia, matmul_a_bt(g, tp.value(ib)));
    if (!tp.is_constant(ib)) tp.accumulate(ib, matmul_at_b(tp.value(ia), g));
  });
}

Var add_row_vector(Var a, Var row) {
  require_same_tape(a, row);
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) shape_fail("add_row_vector", av, rv);
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += rv(0, j);
  }
  const std::size_t ia = a.id(), ir = row.id();
  return a.tape()->record(std::move(out), {ia, ir}, [ia, ir](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    if (!tp.is_constant(ir)) {
      Matrix s(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) s(0, j) += g(i, j);
      }
      tp.accumulate(ir, std::move(s));
    }
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  if (!a.value().same_shape(b.value())) shape_fail("add", a.value(), b.value());
  Matrix out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t k = 0; k < o.size(); ++k) o[k] += bv[k];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  if (!a.value().same_shape(b.value())) shape_fail("sub", a.value(), b.value());
  Matrix out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t k = 0; k < o.size(); ++k) o[k] -= bv[k];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    if (!tp.is_constant(ib)) {
      Matrix neg = g;
      for (double& v : neg.values()) v = -v;
      tp.accumulate(ib, std::move(neg));
    }
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  if (!a.value().same_shape(b.value())) shape_fail("mul", a.value(), b.value());
  Matrix out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t k = 0; k < o.size(); ++k) o[k] *= bv[k];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, const Matrix& g) {
    auto grad_for = [&](std::size_t other) {
      Matrix r = g;
      auto rv = r.values();
      auto ov = tp.value(other).values();
      for (std::size_t k = 0; k < rv.size(); ++k) rv[k] *= ov[k];
      return r;
    };
    if (!tp.is_constant(ia)) tp.accumulate(ia, grad_for(ib));
    if (!tp.is_constant(ib)) tp.accumulate(ib, grad_for(ia));
  });
}

Var scale(Var a, double s) {
  Matrix out = a.value();
  for (double& v : out.values()) v *= s;
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {ia}, [ia, s](Tape& tp, const Matrix& g) {
    Matrix r = g;
    for (double& v : r.values()) v *= s;
    tp.accumulate(ia, std::move(r));
  });
}

Var relu(Var a) {
  Matrix out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {ia}, [ia](Tape& tp, const Matrix& g) {
    Matrix r = g;
    auto rv = r.values();
    auto x = tp.value(ia).values();
    for (std::size_t k = 0; k < rv.size(); ++k) {
      if (!(x[k] > 0.0)) rv[k] = 0.0;
    }
    tp.accumulate(ia, std::move(r));
  });
}

Var dropout(Var a, double p, Rng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - p);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Matrix mask(a.rows(), a.cols());
  for (double& m : mask.values()) m = uniform(rng) < p ? 0.0 : keep_scale;
  Matrix out = a.value();
  auto o = out.values();
  auto mv = mask.values();
  for (std::size_t k = 0; k < o.size(); ++k) o[k] *= mv[k];
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {ia},
                          [ia, mask = std::move(mask)](Tape& tp, const Matrix& g) {
                            Matrix r = g;
                            auto rv = r.values();
                            auto mv2 = mask.values();
                            for (std::size_t k = 0; k < rv.size(); ++k) rv[k] *= mv2[k];
                            tp.accumulate(ia, std::move(r));
                          });
}

Var row_softmax(Var a) {
  Matrix out = a.value();
  softmax_rows_inplace(out);
  const std::size_t ia = a.id();
  const std::size_t self = a.tape()->size();
  return a.tape()->record(std::move(out), {ia}, [ia, self](Tape& tp, const Matrix& g) {
    // dx_j = y_j * (g_j - sum_k g_k y_k)
    const Matrix& y = tp.value(self);
    Matrix r(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double inner = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) inner += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) r(i, j) = y(i, j) * (g(i, j) - inner);
    }
    tp.accumulate(ia, std::move(r));
  });
}

Var log_clamped(Var a, double floor) {
  Matrix out = a.value();
  for (double& v : out.values()) v = std::log(std::max(v, floor));
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {ia}, [ia, floor](Tape& tp, const Matrix& g) {
    Matrix r = g;
    auto rv = r.values();
    auto x = tp.value(ia).values();
    for (std::size_t k = 0; k < rv.size(); ++k) rv[k] = x[k] > floor ? rv[k] / x[k] : 0.0;
    tp.accumulate(ia, std::move(r));
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Matrix& av = a.value();
  Matrix out(rows.size(), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                       av.shape_string());
    }
    std::copy_n(av.row(rows[i]).begin(), av.cols(), out.row(i).begin());
  }
  const std::size_t ia = a.id();
  return a.tape()->record(
      std::move(out), {ia},
      [ia, idx = std::vector<std::size_t>(rows.begin(), rows.end())](Tape& tp, const Matrix& g) {
        const Matrix& src = tp.value(ia);
        Matrix r(src.rows(), src.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) {
          auto dst = r.row(idx[i]);
          auto gr = g.row(i);
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += gr[j];
        }
        tp.accumulate(ia, std::move(r));
      });
}

Var pick_per_row(Var a, std::span<const int> cols) {
  const Matrix& av = a.value();
  if (cols.size() != av.rows()) {
    throw ShapeError("pick_per_row: " + std::to_string(cols.size()) + " indices for " +
                     av.shape_string());
  }
  Matrix out(av.rows(), 1);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] < 0 || static_cast<std::size_t>(cols[i]) >= av.cols()) {
      throw ShapeError("pick_per_row: column " + std::to_string(cols[i]) + " out of range for " +
                       av.shape_string());
    }
    out(i, 0) = av(i, static_cast<std::size_t>(cols[i]));
  }
  const std::size_t ia = a.id();
  return a.tape()->record(
      std::move(out), {ia},
      [ia, idx = std::vector<int>(cols.begin(), cols.end())](Tape& tp, const Matrix& g) {
        const Matrix& src = tp.value(ia);
        Matrix r(src.rows(), src.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) r(i, static_cast<std::size_t>(idx[i])) = g(i, 0);
        tp.accumulate(ia, std::move(r));
      });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.tape()->record(Matrix::scalar(s), {ia}, [ia](Tape& tp, const Matrix& g) {
    const Matrix& src = tp.value(ia);
    tp.accumulate(ia, Matrix(src.rows(), src.cols(), g.item()));
  });
}

Var sum_squares(Var a) {
  const std::size_t ia = a.id();
  return a.tape()->record(Matrix::scalar(sum_of_squares(a.value())), {ia},
                          [ia](Tape& tp, const Matrix& g) {
                            Matrix r = tp.value(ia);
                            const double k = 2.0 * g.item();
                            for (double& v : r.values()) v *= k;
                            tp.accumulate(ia, std::move(r));
                          });
}

Var column_sums(Var a) {
  const Matrix& av = a.value();
  Matrix out(1, av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    for (std::size_t j = 0; j < av.cols(); ++j) out(0, j) += av(i, j);
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {ia}, [ia](Tape& tp, const Matrix& g) {
    const Matrix& src = tp.value(ia);
    Matrix r(src.rows(), src.cols());
    for (std::size_t i = 0; i < r.rows(); ++i) {
      std::copy_n(g.row(0).begin(), r.cols(), r.row(i).begin());
    }
    tp.accumulate(ia, std::move(r));
  });
}

Var column_means(Var a) {
  if (a.rows() == 0) throw ContractError("column_means of an empty matrix");
  return scale(column_sums(a), 1.0 / static_cast<double>(a.rows()));
}

Var dot(Var a, Var b) { return sum(mul(a, b)); }

}  // namespace a2kt
