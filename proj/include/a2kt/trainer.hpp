#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "a2kt/accumulator.hpp"
#include "a2kt/datamodel.hpp"
#include "a2kt/losses.hpp"
#include "a2kt/network.hpp"

namespace a2kt {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step = 0;
};

AdamState make_adam_state(std::span<const Matrix* const> params);

// Bias-corrected Adam update of every parameter in place.
void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
               double learning_rate, const AdamConfig& config = {});

// Scale grads so their joint L2 norm is at most max_norm (no-op when
// max_norm <= 0). Returns the norm before clipping.
double clip_gradients(std::span<Matrix> grads, double max_norm);

struct TrainConfig {
  int epochs = 100;
  double learning_rate = 1e-4;
  double lambda1 = 0.1;
  double lambda2 = 0.5;
  std::size_t batch_size = 0;  // 0: full batch up to 4096 samples, 256 beyond
  std::uint64_t seed = 0;
  double grad_clip_norm = 5.0;
  TermMask terms;  // ablation switches
  double cp_temperature = 1.0;
  SourceScope intra_source_scope = SourceScope::all;
  bool accumulate_union = false;
  int p0_after_warmup = 0;
  AdamConfig adam;

  std::size_t generator_hidden = 1024;
  std::size_t embedding_dim = 512;
  std::size_t classifier_hidden = 512;
  double dropout_p = 0.1;

  // Throws ConfigError on the first violated invariant.
  void validate() const;
  std::size_t effective_batch_size(std::size_t total_samples) const;
  NetworkShape network_shape(std::size_t input_dim, std::size_t class_count) const;
};

struct EpochMetrics {
  int epoch = 0;
  LossReport losses;
  std::optional<double> acc_cn;  // target accuracy, when evaluation labels exist
  std::optional<double> acc_cp;
  std::size_t n_filtered = 0;
  std::size_t n_filtered_classes = 0;
  std::optional<double> p0;  // unset until calibrated
  std::vector<int> filtered_classes;
  double grad_norm = 0.0;  // before clipping, last batch
};

// Observation points for instrumentation; training never depends on them.
struct TrainHooks {
  // Called after every training forward pass with the C_N probabilities of the
  // batch and the losses computed on it.
  std::function<void(const Matrix& cn_probs, const LossReport&)> on_forward;
};

struct ClassifierAccuracy {
  double cn = 0.0;
  double cp = 0.0;
};

double accuracy(const Matrix& probs, std::span<const int> labels);

ClassifierAccuracy evaluate(const Model& model, const PrototypeSet& prototypes, const Matrix& features,
                            std::span<const int> labels, double cp_temperature = 1.0);

// One training batch: source rows first, then target rows. Filtered rows index
// into the batch and are always target rows.
struct Batch {
  Matrix features;
  std::vector<int> source_labels;  // one per source row
  std::vector<std::size_t> filtered_rows;
  std::vector<int> filtered_labels;

  std::size_t source_count() const { return source_labels.size(); }
};

struct ObjectiveResult {
  LossReport report;
  std::vector<Matrix> grads;  // Model::parameters() order; empty unless requested
  Matrix cn_probs;            // C_N output for every batch row
};

// Forward pass in training mode and the full objective over the batch, with
// gradients of the active terms when requested. Dropout draws from rng.
ObjectiveResult compute_objective(const Model& model, const Batch& batch, const TrainConfig& config, Rng& rng,
                                  bool with_gradients = true);

// One pass over the data with the given filter, updating model and Adam state.
// The returned metrics carry losses and filter statistics only.
EpochMetrics train_epoch(Model& model, const TrainingData& data, const FilterState& filter,
                         const TrainConfig& config, AdamState& adam, Rng& rng,
                         const TrainHooks* hooks = nullptr);

struct FitResult {
  Model model;
  PrototypeSet prototypes;  // refreshed after the last epoch
  std::vector<EpochMetrics> history;
  std::vector<FilterState> filters;  // filter used in each epoch
};

// Evaluation data is used only to fill the accuracy fields of the metrics.
FitResult fit(const TrainingData& data, const TrainConfig& config, const EvaluationData* evaluation = nullptr,
              const TrainHooks* hooks = nullptr);

// One JSON object per line; the final line repeats the last epoch with "final": true.
std::string metrics_to_jsonl(std::span<const EpochMetrics> history);

}  // namespace a2kt
