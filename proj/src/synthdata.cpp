#include "a2kt/synthdata.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "a2kt/error.hpp"

namespace a2kt {
namespace {

// Rows are orthonormal; Gram-Schmidt over Gaussian draws, redrawn on collapse.
Matrix random_orthonormal_rows(std::size_t count, std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix q(count, dim);
  for (std::size_t k = 0; k < count; ++k) {
    auto row = q.row(k);
    for (;;) {
      for (double& v : row) v = normal(rng);
      for (std::size_t prev = 0; prev < k; ++prev) {
        auto p = q.row(prev);
        const double proj = std::inner_product(row.begin(), row.end(), p.begin(), 0.0);
        for (std::size_t j = 0; j < dim; ++j) row[j] -= proj * p[j];
      }
      const double norm = std::sqrt(std::inner_product(row.begin(), row.end(), row.begin(), 0.0));
      if (norm > 1e-6) {
        for (double& v : row) v /= norm;
        break;
      }
    }
  }
  return q;
}

}  // namespace

void SynthSpec::validate() const {
  if (shared_classes < 1 || shared_classes > source_classes) {
    throw ConfigError("shared classes must satisfy 1 <= C_t <= C_s, got C_t=" + std::to_string(shared_classes) +
                      " C_s=" + std::to_string(source_classes));
  }
  if (source_classes < 2) throw ConfigError("at least 2 source classes are required");
  if (dim < source_classes) {
    throw ConfigError("feature dimension " + std::to_string(dim) + " must be at least the source class count " +
                      std::to_string(source_classes));
  }
  if (!(cluster_std > 0.0)) throw ConfigError("cluster standard deviation must be positive");
  if (!(center_distance >= 4.0 * cluster_std)) {
    throw ConfigError("center distance must be at least 4 cluster standard deviations");
  }
  if (source_per_class == 0 || target_per_class == 0) throw ConfigError("per-class sample counts must be positive");
  if (!(shift_magnitude >= 0.0) || !std::isfinite(shift_angle_deg)) throw ConfigError("invalid domain shift");
}

PdaTask generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d = spec.dim;
  const std::size_t cs = spec.source_classes;
  const std::size_t ct = spec.shared_classes;

  Matrix centers = random_orthonormal_rows(cs, d, rng);
  const double radius = spec.center_distance / std::numbers::sqrt2;
  for (double& v : centers.values()) v *= radius;

  // Rotation R = Q^T B Q with B rotating each coordinate pair of the basis Q.
  const Matrix basis = random_orthonormal_rows(d, d, rng);
  const double angle = spec.shift_angle_deg * std::numbers::pi / 180.0;
  const double cos_a = std::cos(angle), sin_a = std::sin(angle);
  std::vector<double> translation(d);
  {
    double norm = 0.0;
    for (double& v : translation) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : translation) v *= spec.shift_magnitude / norm;
  }
  std::vector<double> pivot(d, 0.0);
  for (std::size_t c = 0; c < ct; ++c) {
    for (std::size_t j = 0; j < d; ++j) pivot[j] += centers(c, j) / static_cast<double>(ct);
  }

  auto shift = [&](std::span<double> x) {
    std::vector<double> coords(d);
    for (std::size_t k = 0; k < d; ++k) {
      double s = 0.0;
      auto q = basis.row(k);
      for (std::size_t j = 0; j < d; ++j) s += q[j] * (x[j] - pivot[j]);
      coords[k] = s;
    }
    for (std::size_t k = 0; k + 1 < d; k += 2) {
      const double a = coords[k], b = coords[k + 1];
      coords[k] = cos_a * a - sin_a * b;
      coords[k + 1] = sin_a * a + cos_a * b;
    }
    for (std::size_t j = 0; j < d; ++j) x[j] = pivot[j] + translation[j];
    for (std::size_t k = 0; k < d; ++k) {
      auto q = basis.row(k);
      for (std::size_t j = 0; j < d; ++j) x[j] += coords[k] * q[j];
    }
  };

  PdaTask task;
  TrainingData& tr = task.training;
  tr.class_count = static_cast<int>(cs);
  task.label_space.class_count = static_cast<int>(cs);

  tr.source_features = Matrix(cs * spec.source_per_class, d);
  tr.source_labels.reserve(cs * spec.source_per_class);
  std::size_t row = 0;
  for (std::size_t c = 0; c < cs; ++c) {
    for (std::size_t i = 0; i < spec.source_per_class; ++i, ++row) {
      auto x = tr.source_features.row(row);
      for (std::size_t j = 0; j < d; ++j) x[j] = centers(c, j) + spec.cluster_std * normal(rng);
      tr.source_labels.push_back(static_cast<int>(c));
    }
  }

  tr.target_features = Matrix(ct * spec.target_per_class, d);
  std::vector<int> target_labels;
  row = 0;
  for (std::size_t c = 0; c < ct; ++c) {
    for (std::size_t i = 0; i < spec.target_per_class; ++i, ++row) {
      auto x = tr.target_features.row(row);
      for (std::size_t j = 0; j < d; ++j) x[j] = centers(c, j) + spec.cluster_std * normal(rng);
      shift(x);
      target_labels.push_back(static_cast<int>(c));
    }
  }

  task.evaluation.target_labels = std::move(target_labels);
  std::vector<int> shared(ct);
  std::iota(shared.begin(), shared.end(), 0);
  task.evaluation.true_shared_classes = std::move(shared);
  return task;
}

void export_task(const PdaTask& task, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const TrainingData& tr = task.training;
  write_feature_file(dir / "source.feat", LabeledSet{tr.source_features, tr.source_labels, tr.class_count});
  write_feature_file(dir / "target.feat", LabeledSet{tr.target_features, std::nullopt, tr.class_count});
  if (task.evaluation.target_labels) {
    write_feature_file(dir / "target_eval.feat",
                       LabeledSet{tr.target_features, task.evaluation.target_labels, tr.class_count});
  }
}

PdaTask load_task(const std::filesystem::path& dir) {
  LabeledSet source = load_feature_file(dir / "source.feat");
  LabeledSet target = load_feature_file(dir / "target.feat");
  if (target.labeled()) throw ParseError((dir / "target.feat").string() + ": target training file must be unlabeled");
  PdaTask task = make_task(std::move(source), std::move(target));
  const auto eval_path = dir / "target_eval.feat";
  if (std::filesystem::exists(eval_path)) {
    LabeledSet eval = load_feature_file(eval_path);
    if (!eval.labeled()) throw ParseError(eval_path.string() + ": evaluation file has no labels");
    if (!(eval.features == task.training.target_features)) {
      throw ParseError(eval_path.string() + ": features differ from target.feat");
    }
    task.evaluation.target_labels = std::move(eval.labels);
  }
  return task;
}

}  // namespace a2kt
