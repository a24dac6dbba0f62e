#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "a2kt/diffcore.hpp"

namespace a2kt {

enum class Domain { source, target };

// Which source samples enter the alignment losses: every class, or only the
// classes present among the filtered targets.
enum class SourceScope { all, filtered };

// Row indices into one embedding matrix, grouped by class and domain.
// Source lists cover all classes; target lists hold the filtered confident
// targets by pseudo label and are empty outside filtered_classes.
struct ClassPartition {
  std::size_t class_count = 0;
  std::vector<std::vector<std::size_t>> source;
  std::vector<std::vector<std::size_t>> target;
  std::vector<int> filtered_classes;  // ascending, classes with at least one filtered target

  const std::vector<std::size_t>& cell(int c, Domain d) const {
    return d == Domain::source ? source[static_cast<std::size_t>(c)]
                               : target[static_cast<std::size_t>(c)];
  }
};

ClassPartition make_partition(std::span<const std::size_t> source_rows, std::span<const int> source_labels,
                              std::span<const std::size_t> target_rows, std::span<const int> target_labels,
                              std::size_t class_count);

// Mean negative log-probability of the true class, probabilities clamped at 1e-12.
Var cross_entropy_loss(Var probs, std::span<const int> labels);

// Squared L2 distance between the means of cell (c_i, d_k) and cell (c_j, d_l).
Var center_discrepancy(Var z, const ClassPartition& partition, int c_i, int c_j, Domain d_k, Domain d_l);

struct InterClassTerms {
  Var total;          // lambda1 * (within_source + within_target) + cross_domain
  Var within_source;  // ordered-pair mean of source center distances
  Var within_target;
  Var cross_domain;
};

InterClassTerms inter_class_loss(Var z, const ClassPartition& partition, double lambda1,
                                 SourceScope scope = SourceScope::all);

// Mean squared distance over ordered pairs of distinct samples pooled from the
// source cell and the filtered target cell of class c; 0 when fewer than 2.
Var intra_class_scatter(Var z, const ClassPartition& partition, int c, SourceScope scope = SourceScope::all);

Var intra_class_loss(Var z, const ClassPartition& partition, double lambda2,
                     SourceScope scope = SourceScope::all);

// Mean row entropy with 0 log 0 = 0.
Var entropy_loss(Var probs);

struct LossReport {
  double l_y = 0.0;
  double l_inter = 0.0;
  double l_intra = 0.0;
  double l_em = 0.0;
  double total = 0.0;  // active terms only
  double inter_within_source = 0.0;
  double inter_within_target = 0.0;
  double inter_cross_domain = 0.0;
};

struct TermMask {
  bool l_y = true;
  bool l_inter = true;
  bool l_intra = true;
  bool l_em = true;

  bool any() const { return l_y || l_inter || l_intra || l_em; }
};

// L_y + L_intra - L_inter + L_em over the active terms.
double total_objective(double l_y, double l_intra, double l_inter, double l_em, const TermMask& mask = {});
Var total_objective(Var l_y, Var l_intra, Var l_inter, Var l_em, const TermMask& mask = {});

}  // namespace a2kt
