#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "a2kt/diffcore.hpp"

namespace a2kt {

using FeatureMatrix = Matrix;

struct LabelSpace {
  int class_count = 0;
  std::vector<std::string> class_names;  // optional, may be empty
};

// Features with optional labels in [0, class_count). Unlabeled sets carry no
// label array at all.
struct LabeledSet {
  FeatureMatrix features;
  std::optional<std::vector<int>> labels;
  int class_count = 0;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  bool labeled() const { return labels.has_value(); }
};

// Everything a training run may look at.
struct TrainingData {
  FeatureMatrix source_features;
  std::vector<int> source_labels;
  FeatureMatrix target_features;
  int class_count = 0;

  std::size_t dim() const { return source_features.cols(); }
};

// Held-out ground truth. Only evaluation code receives this struct.
struct EvaluationData {
  std::optional<std::vector<int>> target_labels;
  std::optional<std::vector<int>> true_shared_classes;
};

struct PdaTask {
  TrainingData training;
  EvaluationData evaluation;
  LabelSpace label_space;
};

LabeledSet load_feature_file(const std::filesystem::path& path);
LabeledSet parse_feature_text(const std::string& text);

// Labels are written as -1 when the set is unlabeled. Values use the shortest
// representation that round-trips exactly.
void write_feature_file(const std::filesystem::path& path, const LabeledSet& set);
std::string format_feature_text(const LabeledSet& set);

// Build a task from a labeled source set and a target set; target labels, if
// present, go to the evaluation side.
PdaTask make_task(LabeledSet source, LabeledSet target);

// Empty result means the task is valid.
std::vector<std::string> validate_task(const PdaTask& task);

std::string format_double(double v);

}  // namespace a2kt
