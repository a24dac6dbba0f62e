#pragma once

// Independent reference computations used only by the tests. Every function
// here works on plain matrices with direct loops, never through the tape.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "a2kt/diffcore.hpp"
#include "a2kt/accumulator.hpp"
#include "a2kt/losses.hpp"

namespace a2kt::oracle {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = u(rng);
  return m;
}

// Central differences of a scalar function of one matrix.
inline Matrix finite_difference(const std::function<double(const Matrix&)>& f, const Matrix& at, double h = 1e-6) {
  Matrix g(at.rows(), at.cols());
  Matrix x = at;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double orig = x.values()[k];
    x.values()[k] = orig + h;
    const double up = f(x);
    x.values()[k] = orig - h;
    const double down = f(x);
    x.values()[k] = orig;
    g.values()[k] = (up - down) / (2.0 * h);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const Matrix& a, const Matrix& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double x = a.values()[k], y = b.values()[k];
    diff += (x - y) * (x - y);
    na += x * x;
    nb += y * y;
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a.values()[k] - b.values()[k]));
  return m;
}

inline double cross_entropy(const Matrix& probs, const std::vector<int>& labels) {
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    s += -std::log(std::max(probs(i, static_cast<std::size_t>(labels[i])), 1e-12));
  }
  return s / static_cast<double>(labels.size());
}

inline std::vector<double> mean_of(const Matrix& z, const std::vector<std::size_t>& rows) {
  std::vector<double> m(z.cols(), 0.0);
  for (std::size_t r : rows) {
    for (std::size_t j = 0; j < z.cols(); ++j) m[j] += z(r, j);
  }
  for (double& v : m) v /= static_cast<double>(rows.size());
  return m;
}

inline double center_distance(const Matrix& z, const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  const auto ma = mean_of(z, a);
  const auto mb = mean_of(z, b);
  double s = 0.0;
  for (std::size_t j = 0; j < ma.size(); ++j) s += (ma[j] - mb[j]) * (ma[j] - mb[j]);
  return s;
}

// Direct transcription of the inter-class loss with ordered class pairs.
inline double inter_class(const Matrix& z, const ClassPartition& p, double lambda1, SourceScope scope = SourceScope::all) {
  std::vector<int> src_classes;
  for (std::size_t c = 0; c < p.class_count; ++c) {
    if (scope == SourceScope::filtered && p.target[c].empty()) continue;
    src_classes.push_back(static_cast<int>(c));
  }
  double ss = 0.0;
  const double k = static_cast<double>(src_classes.size());
  if (src_classes.size() >= 2) {
    for (int c : src_classes) {
      for (int c2 : src_classes) {
        if (c == c2 || p.source[c].empty() || p.source[c2].empty()) continue;
        ss += center_distance(z, p.source[c], p.source[c2]) / (k * (k - 1.0));
      }
    }
  }
  double tt = 0.0, st = 0.0;
  const auto& fc = p.filtered_classes;
  const double kh = static_cast<double>(fc.size());
  if (fc.size() >= 2) {
    for (int c : fc) {
      for (int c2 : fc) {
        if (c == c2) continue;
        tt += center_distance(z, p.target[c], p.target[c2]) / (kh * (kh - 1.0));
        if (!p.source[c].empty()) st += center_distance(z, p.source[c], p.target[c2]) / (kh * (kh - 1.0));
      }
    }
  }
  return lambda1 * (ss + tt) + st;
}

inline double intra_scatter(const Matrix& z, const std::vector<std::size_t>& rows) {
  const std::size_t n = rows.size();
  if (n < 2) return 0.0;
  double s = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      if (a == b) continue;
      for (std::size_t j = 0; j < z.cols(); ++j) {
        const double d = z(rows[a], j) - z(rows[b], j);
        s += d * d;
      }
    }
  }
  return s / (static_cast<double>(n) * static_cast<double>(n - 1));
}

inline double intra_class(const Matrix& z, const ClassPartition& p, double lambda2, SourceScope scope = SourceScope::all) {
  double s = 0.0;
  for (std::size_t c = 0; c < p.class_count; ++c) {
    std::vector<std::size_t> pooled;
    if (scope == SourceScope::all || !p.target[c].empty()) pooled = p.source[c];
    pooled.insert(pooled.end(), p.target[c].begin(), p.target[c].end());
    s += intra_scatter(z, pooled);
  }
  return lambda2 * s / static_cast<double>(p.class_count);
}

inline double entropy(const Matrix& probs) {
  double s = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    for (std::size_t j = 0; j < probs.cols(); ++j) {
      const double p = probs(i, j);
      if (p > 0.0) s -= p * std::log(std::max(p, 1e-12));
    }
  }
  return s / static_cast<double>(probs.rows());
}

// Random row-stochastic matrix.
inline Matrix random_probs(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  Matrix m = random_matrix(rows, cols, rng, -3.0, 3.0);
  softmax_rows_inplace(m);
  return m;
}

struct LossInstance {
  Matrix z;
  ClassPartition partition;
  std::vector<std::size_t> source_rows, target_rows;
  std::vector<int> source_labels, target_labels;
};

// Random embeddings with a random source/filtered-target split. Some classes
// may end up without source rows or without filtered targets.
inline LossInstance random_loss_instance(std::mt19937_64& rng, std::size_t max_n = 30, std::size_t max_c = 5) {
  LossInstance in;
  const std::size_t c = 2 + rng() % (max_c - 1);
  const std::size_t n = 4 + rng() % (max_n - 3);
  const std::size_t dz = 1 + rng() % 6;
  in.z = random_matrix(n, dz, rng, -2, 2);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t ns = 1 + rng() % (n - 1);
  for (std::size_t k = 0; k < n; ++k) {
    const int label = static_cast<int>(rng() % c);
    if (k < ns) {
      in.source_rows.push_back(order[k]);
      in.source_labels.push_back(label);
    } else if (rng() % 4 != 0) {
      in.target_rows.push_back(order[k]);
      in.target_labels.push_back(label);
    }
  }
  in.partition = make_partition(in.source_rows, in.source_labels, in.target_rows, in.target_labels, c);
  return in;
}

// Row-by-row scan for the confident-target filter.
inline std::vector<SelectedTarget> brute_force_filter(const Matrix& probs, double p0) {
  std::vector<SelectedTarget> out;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.cols(); ++c)
      if (probs(i, c) > probs(i, best)) best = c;
    if (probs(i, best) > p0) out.push_back({i, static_cast<int>(best), probs(i, best)});
  }
  return out;
}

// Random probability rows with some exact ties and values near round thresholds.
inline Matrix random_probs_with_ties(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  Matrix m = random_probs(rows, cols, rng);
  for (std::size_t i = 0; i < rows; ++i) {
    if (rng() % 5 == 0) {
      for (double& v : m.row(i)) v = 1.0 / static_cast<double>(cols);
    } else if (cols >= 3 && rng() % 5 == 0) {
      m(i, 0) = m(i, 1) = 0.4;
      for (std::size_t c = 2; c < cols; ++c) m(i, c) = 0.2 / static_cast<double>(cols - 2);
    }
  }
  return m;
}

}  // namespace a2kt::oracle
