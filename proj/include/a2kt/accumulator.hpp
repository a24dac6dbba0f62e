#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "a2kt/diffcore.hpp"

namespace a2kt {

struct SelectedTarget {
  std::size_t index = 0;  // row in the target set
  int pseudo_label = 0;
  double confidence = 0.0;

  friend bool operator==(const SelectedTarget&, const SelectedTarget&) = default;
};

struct FilterState {
  double p0 = 1.0;
  std::vector<SelectedTarget> selected;  // ascending by index
  std::vector<int> class_set;            // ascending
  int epoch = 0;

  std::vector<std::size_t> indices() const;
  std::vector<int> pseudo_labels() const;

  friend bool operator==(const FilterState&, const FilterState&) = default;
};

// Half-up rounding to two decimals; values within 1e-9 below a half-cent
// boundary are treated as on it.
double round_threshold(double p);

// Mean prototype probability of the ground-truth class over the source set,
// rounded to two decimals.
double compute_threshold(const Matrix& source_probs, std::span<const int> source_labels);

// Targets whose argmax probability strictly exceeds p0, pseudo-labelled with
// the argmax (lowest index on ties).
FilterState filter_confident_targets(const Matrix& target_probs, double p0, int epoch = 0);

// Union of the samples selected so far: entries chosen now take their current
// pseudo label, earlier ones keep theirs.
FilterState accumulate_union(const FilterState& previous, const FilterState& current);

struct ClassDynamics {
  std::vector<std::size_t> class_counts;      // |C_hat| per epoch
  std::vector<std::vector<int>> memberships;  // C_hat per epoch
};

ClassDynamics track_class_dynamics(std::span<const FilterState> history);

}  // namespace a2kt
