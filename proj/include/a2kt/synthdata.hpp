#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

#include "a2kt/datamodel.hpp"

namespace a2kt {

// Gaussian-cluster partial domain adaptation task. Source classes sit on
// mutually orthogonal directions scaled so every pair of centers is exactly
// center_distance apart. The target holds the first shared_classes classes,
// rotated about their common centroid by shift_angle_deg in every plane of a
// random orthonormal basis and then translated by shift_magnitude.
struct SynthSpec {
  std::size_t dim = 64;
  std::size_t source_classes = 8;
  std::size_t shared_classes = 4;
  std::size_t source_per_class = 200;
  std::size_t target_per_class = 100;
  double cluster_std = 1.0;
  double center_distance = 6.0;
  double shift_magnitude = 3.0;
  double shift_angle_deg = 60.0;
  std::uint64_t seed = 0;

  void validate() const;
};

PdaTask generate(const SynthSpec& spec);

// Writes source.feat, target.feat (labels -1) and target_eval.feat.
void export_task(const PdaTask& task, const std::filesystem::path& dir);

// Reads the files written by export_task; target_eval.feat is optional.
PdaTask load_task(const std::filesystem::path& dir);

}  // namespace a2kt
