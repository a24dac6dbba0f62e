#include "a2kt/accumulator.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "a2kt/error.hpp"
#include "a2kt/network.hpp"

namespace a2kt {
namespace {

std::vector<int> classes_of(const std::vector<SelectedTarget>& selected) {
  std::set<int> s;
  for (const auto& t : selected) s.insert(t.pseudo_label);
  return {s.begin(), s.end()};
}

}  // namespace

std::vector<std::size_t> FilterState::indices() const {
  std::vector<std::size_t> out;
  out.reserve(selected.size());
  for (const auto& t : selected) out.push_back(t.index);
  return out;
}

std::vector<int> FilterState::pseudo_labels() const {
  std::vector<int> out;
  out.reserve(selected.size());
  for (const auto& t : selected) out.push_back(t.pseudo_label);
  return out;
}

double round_threshold(double p) {
  const double r = std::floor(p * 100.0 + 0.5 + 1e-9) / 100.0;
  return std::clamp(r, 0.0, 1.0);
}

double compute_threshold(const Matrix& source_probs, std::span<const int> source_labels) {
  if (source_probs.rows() == 0) throw ContractError("compute_threshold on an empty source set");
  if (source_labels.size() != source_probs.rows()) throw ShapeError("compute_threshold: label count mismatch");
  double total = 0.0;
  for (std::size_t j = 0; j < source_labels.size(); ++j) {
    const int y = source_labels[j];
    if (y < 0 || static_cast<std::size_t>(y) >= source_probs.cols()) {
      throw ShapeError("compute_threshold: label out of range");
    }
    total += source_probs(j, static_cast<std::size_t>(y));
  }
  return round_threshold(total / static_cast<double>(source_labels.size()));
}

FilterState filter_confident_targets(const Matrix& target_probs, double p0, int epoch) {
  FilterState state;
  state.p0 = p0;
  state.epoch = epoch;
  const std::vector<int> best = argmax_rows(target_probs);
  for (std::size_t i = 0; i < target_probs.rows(); ++i) {
    const double conf = target_probs(i, static_cast<std::size_t>(best[i]));
    if (conf > p0) state.selected.push_back({i, best[i], conf});
  }
  state.class_set = classes_of(state.selected);
  return state;
}

FilterState accumulate_union(const FilterState& previous, const FilterState& current) {
  FilterState out;
  out.p0 = current.p0;
  out.epoch = current.epoch;
  std::size_t a = 0, b = 0;
  const auto& prev = previous.selected;
  const auto& cur = current.selected;
  while (a < prev.size() || b < cur.size()) {
    if (b < cur.size() && (a == prev.size() || cur[b].index <= prev[a].index)) {
      if (a < prev.size() && prev[a].index == cur[b].index) ++a;
      out.selected.push_back(cur[b++]);
    } else {
      out.selected.push_back(prev[a++]);
    }
  }
  out.class_set = classes_of(out.selected);
  return out;
}

ClassDynamics track_class_dynamics(std::span<const FilterState> history) {
  if (history.empty()) throw ContractError("track_class_dynamics needs at least one epoch");
  ClassDynamics d;
  for (const auto& s : history) {
    d.class_counts.push_back(s.class_set.size());
    d.memberships.push_back(s.class_set);
  }
  return d;
}

}  // namespace a2kt
