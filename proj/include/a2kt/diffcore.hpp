#pragma once

// Dense 64-bit matrices and a tape-based reverse-mode differentiator covering
// the operations needed by the generator, the MLP classifier and the losses.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace a2kt {

using Rng = std::mt19937_64;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix scalar(double v) { return Matrix(1, 1, v); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  // Value of a 1x1 matrix.
  double item() const;

  std::string shape_string() const;
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Plain value kernels, shared by the tape ops and the gradient-free paths.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_at_b(const Matrix& a, const Matrix& b);  // a^T * b
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);  // a * b^T
void softmax_rows_inplace(Matrix& m);
bool all_finite(const Matrix& m);
double sum_of_squares(const Matrix& m);

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  // Gradient after Tape::backward; a zero matrix when the root does not reach it.
  Matrix grad() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Matrix value);

  // Reset every gradient, seed the 1x1 root with 1 and propagate in reverse
  // recording order. Calling it twice yields identical gradients.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }
  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }
  const Matrix& raw_grad(std::size_t id) const { return nodes_[id].grad; }

  // Op-implementation interface. A node whose parents are all constant is
  // itself constant and its backward function is dropped.
  Var record(Matrix value, std::initializer_list<std::size_t> parents, BackwardFn fn);
  void accumulate(std::size_t id, const Matrix& g);
  void accumulate(std::size_t id, Matrix&& g);
  bool is_constant(std::size_t id) const { return nodes_[id].constant; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool constant = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Differentiable operations.
Var matmul(Var a, Var b);
Var add_row_vector(Var a, Var row);  // a (n x c) + row (1 x c) broadcast over rows
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double s);
Var relu(Var a);
Var dropout(Var a, double p, Rng& rng, bool training);
Var row_softmax(Var a);
Var log_clamped(Var a, double floor);
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var pick_per_row(Var a, std::span<const int> cols);  // n x 1 of a(i, cols[i])
Var sum(Var a);                                       // 1 x 1
Var sum_squares(Var a);                               // 1 x 1
Var column_sums(Var a);                               // 1 x c
Var column_means(Var a);                              // 1 x c
Var dot(Var a, Var b);                                // 1 x 1, sum of a .* b

}  // namespace a2kt
