#include "a2kt/losses.hpp"

#include <algorithm>
#include <string>

#include "a2kt/error.hpp"

namespace a2kt {
namespace {

constexpr double kLogFloor = 1e-12;

Var zero_like(Var z) { return z.tape()->constant(Matrix::scalar(0.0)); }

Var cell_mean(Var z, const std::vector<std::size_t>& rows) { return column_means(gather_rows(z, rows)); }

// Sum over ordered pairs (a, b), a != b, of ||mean_a - mean_b||^2.
Var ordered_pair_sum(Var z, const std::vector<const std::vector<std::size_t>*>& lhs,
                     const std::vector<const std::vector<std::size_t>*>& rhs) {
  std::vector<Var> lmeans(lhs.size()), rmeans(rhs.size());
  for (std::size_t k = 0; k < lhs.size(); ++k) {
    if (!lhs[k]->empty()) lmeans[k] = cell_mean(z, *lhs[k]);
  }
  for (std::size_t k = 0; k < rhs.size(); ++k) {
    if (!rhs[k]->empty()) rmeans[k] = (lhs[k] == rhs[k]) ? lmeans[k] : cell_mean(z, *rhs[k]);
  }
  Var acc = zero_like(z);
  for (std::size_t a = 0; a < lhs.size(); ++a) {
    if (lhs[a]->empty()) continue;
    for (std::size_t b = 0; b < rhs.size(); ++b) {
      if (a == b || rhs[b]->empty()) continue;
      acc = add(acc, sum_squares(sub(lmeans[a], rmeans[b])));
    }
  }
  return acc;
}

bool in_filtered(const ClassPartition& p, std::size_t c) { return !p.target[c].empty(); }

}  // namespace

ClassPartition make_partition(std::span<const std::size_t> source_rows, std::span<const int> source_labels,
                              std::span<const std::size_t> target_rows, std::span<const int> target_labels,
                              std::size_t class_count) {
  if (source_rows.size() != source_labels.size() || target_rows.size() != target_labels.size()) {
    throw ShapeError("make_partition: row and label counts differ");
  }
  ClassPartition p;
  p.class_count = class_count;
  p.source.assign(class_count, {});
  p.target.assign(class_count, {});
  auto check = [class_count](int c) {
    if (c < 0 || static_cast<std::size_t>(c) >= class_count) {
      throw ShapeError("make_partition: label " + std::to_string(c) + " out of range");
    }
    return static_cast<std::size_t>(c);
  };
  for (std::size_t i = 0; i < source_rows.size(); ++i) p.source[check(source_labels[i])].push_back(source_rows[i]);
  for (std::size_t i = 0; i < target_rows.size(); ++i) p.target[check(target_labels[i])].push_back(target_rows[i]);
  for (std::size_t c = 0; c < class_count; ++c) {
    if (!p.target[c].empty()) p.filtered_classes.push_back(static_cast<int>(c));
  }
  return p;
}

Var cross_entropy_loss(Var probs, std::span<const int> labels) {
  if (probs.rows() == 0) throw ContractError("cross_entropy_loss on empty input");
  Var logp = log_clamped(pick_per_row(probs, labels), kLogFloor);
  return scale(sum(logp), -1.0 / static_cast<double>(probs.rows()));
}

Var center_discrepancy(Var z, const ClassPartition& partition, int c_i, int c_j, Domain d_k, Domain d_l) {
  const auto& a = partition.cell(c_i, d_k);
  const auto& b = partition.cell(c_j, d_l);
  if (a.empty() || b.empty()) {
    throw ContractError("center_discrepancy: empty cell for class " + std::to_string(a.empty() ? c_i : c_j));
  }
  return sum_squares(sub(cell_mean(z, a), cell_mean(z, b)));
}

InterClassTerms inter_class_loss(Var z, const ClassPartition& partition, double lambda1, SourceScope scope) {
  const std::size_t c_count = partition.class_count;
  const std::size_t filtered = partition.filtered_classes.size();
  InterClassTerms out{zero_like(z), zero_like(z), zero_like(z), zero_like(z)};

  // Within source: every class under the default scope, the filtered classes otherwise.
  {
    std::vector<const std::vector<std::size_t>*> cells;
    for (std::size_t c = 0; c < c_count; ++c) {
      if (scope == SourceScope::filtered && !in_filtered(partition, c)) continue;
      cells.push_back(&partition.source[c]);
    }
    const double k = static_cast<double>(cells.size());
    if (cells.size() >= 2) out.within_source = scale(ordered_pair_sum(z, cells, cells), 1.0 / (k * (k - 1.0)));
  }

  if (filtered >= 2) {
    const double k = static_cast<double>(filtered);
    std::vector<const std::vector<std::size_t>*> tcells, scells;
    for (int c : partition.filtered_classes) {
      tcells.push_back(&partition.target[static_cast<std::size_t>(c)]);
      scells.push_back(&partition.source[static_cast<std::size_t>(c)]);
    }
    out.within_target = scale(ordered_pair_sum(z, tcells, tcells), 1.0 / (k * (k - 1.0)));
    out.cross_domain = scale(ordered_pair_sum(z, scells, tcells), 1.0 / (k * (k - 1.0)));
  }

  out.total = add(scale(add(out.within_source, out.within_target), lambda1), out.cross_domain);
  return out;
}

Var intra_class_scatter(Var z, const ClassPartition& partition, int c, SourceScope scope) {
  const auto cls = static_cast<std::size_t>(c);
  std::vector<std::size_t> rows;
  if (scope == SourceScope::all || in_filtered(partition, cls)) {
    rows = partition.source[cls];
  }
  rows.insert(rows.end(), partition.target[cls].begin(), partition.target[cls].end());
  if (rows.size() < 2) return zero_like(z);
  // sum_{i != j} ||z_i - z_j||^2 = 2 N sum_i ||z_i - mean||^2
  const double n = static_cast<double>(rows.size());
  Var pooled = gather_rows(z, rows);
  Var centered = add_row_vector(pooled, scale(column_means(pooled), -1.0));
  return scale(sum_squares(centered), 2.0 / (n - 1.0));
}

Var intra_class_loss(Var z, const ClassPartition& partition, double lambda2, SourceScope scope) {
  Var acc = zero_like(z);
  for (std::size_t c = 0; c < partition.class_count; ++c) {
    acc = add(acc, intra_class_scatter(z, partition, static_cast<int>(c), scope));
  }
  return scale(acc, lambda2 / static_cast<double>(partition.class_count));
}

Var entropy_loss(Var probs) {
  if (probs.rows() == 0) throw ContractError("entropy_loss on empty input");
  Var plogp = mul(probs, log_clamped(probs, kLogFloor));
  return scale(sum(plogp), -1.0 / static_cast<double>(probs.rows()));
}

double total_objective(double l_y, double l_intra, double l_inter, double l_em, const TermMask& mask) {
  double total = 0.0;
  if (mask.l_y) total += l_y;
  if (mask.l_intra) total += l_intra;
  if (mask.l_inter) total -= l_inter;
  if (mask.l_em) total += l_em;
  return total;
}

Var total_objective(Var l_y, Var l_intra, Var l_inter, Var l_em, const TermMask& mask) {
  Var total = l_y.tape()->constant(Matrix::scalar(0.0));
  if (mask.l_y) total = add(total, l_y);
  if (mask.l_intra) total = add(total, l_intra);
  if (mask.l_inter) total = sub(total, l_inter);
  if (mask.l_em) total = add(total, l_em);
  return total;
}

}  // namespace a2kt
