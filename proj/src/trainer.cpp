#include "a2kt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <string>

#include "json.hpp"

#include "a2kt/error.hpp"

namespace a2kt {
namespace {

constexpr std::size_t kFullBatchLimit = 4096;
constexpr std::size_t kLargeBatch = 256;

struct Snapshot {
  Matrix z_source;
  Matrix z_target;
  PrototypeSet prototypes;
  Matrix cp_source;
  Matrix cp_target;
};

Snapshot take_snapshot(const Model& model, const TrainingData& data, double temperature) {
  Snapshot s;
  s.z_source = generator_forward(model, data.source_features);
  s.z_target = generator_forward(model, data.target_features);
  s.prototypes = compute_prototypes(s.z_source, data.source_labels, static_cast<std::size_t>(data.class_count));
  s.cp_source = cp_predict(s.prototypes, s.z_source, temperature);
  s.cp_target = cp_predict(s.prototypes, s.z_target, temperature);
  return s;
}

// Split [0, n) into `parts` contiguous chunks whose sizes differ by at most one.
std::vector<std::pair<std::size_t, std::size_t>> chunk_bounds(std::size_t n, std::size_t parts) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t begin = 0;
  for (std::size_t k = 0; k < parts; ++k) {
    const std::size_t len = n / parts + (k < n % parts ? 1 : 0);
    out.emplace_back(begin, begin + len);
    begin += len;
  }
  return out;
}

void check_finite(const LossReport& r, int epoch) {
  const double vals[] = {r.l_y, r.l_inter, r.l_intra, r.l_em, r.total};
  const char* names[] = {"L_y", "L_inter", "L_intra", "L_em", "total"};
  for (std::size_t k = 0; k < 5; ++k) {
    if (!std::isfinite(vals[k])) {
      throw NumericError("non-finite " + std::string(names[k]) + " at epoch " + std::to_string(epoch));
    }
  }
}

void check_training_data(const TrainingData& data) {
  if (data.class_count < 2) throw ConfigError("class count must be at least 2");
  if (data.source_features.rows() == 0) throw ContractError("empty source set");
  if (data.target_features.rows() == 0) throw ContractError("empty target set");
  if (data.source_features.cols() != data.target_features.cols()) {
    throw ShapeError("source dimension " + std::to_string(data.source_features.cols()) +
                     " differs from target dimension " + std::to_string(data.target_features.cols()));
  }
  if (data.source_labels.size() != data.source_features.rows()) {
    throw ShapeError("source label count differs from source sample count");
  }
}

}  // namespace

AdamState make_adam_state(std::span<const Matrix* const> params) {
  AdamState s;
  for (const Matrix* p : params) {
    s.first_moment.emplace_back(p->rows(), p->cols());
    s.second_moment.emplace_back(p->rows(), p->cols());
  }
  return s;
}

void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
               double learning_rate, const AdamConfig& config) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ShapeError("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k]->same_shape(grads[k]) || !params[k]->same_shape(state.first_moment[k])) {
      throw ShapeError("adam_step: parameter " + std::to_string(k) + " is " + params[k]->shape_string() +
                       " but gradient is " + grads[k].shape_string());
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k]->values();
    auto g = grads[k].values();
    auto m = state.first_moment[k].values();
    auto v = state.second_moment[k].values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

double clip_gradients(std::span<Matrix> grads, double max_norm) {
  double sq = 0.0;
  for (const Matrix& g : grads) sq += sum_of_squares(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (Matrix& g : grads) {
      for (double& v : g.values()) v *= factor;
    }
  }
  return norm;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1, got " + std::to_string(epochs));
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ConfigError("lambda1 and lambda2 must be non-negative");
  if (!(cp_temperature > 0.0)) throw ConfigError("cp temperature must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1)");
  if (p0_after_warmup < 0) throw ConfigError("p0 warmup epochs must be non-negative");
  if (p0_after_warmup >= epochs) throw ConfigError("p0 warmup must end before the last epoch");
  if (generator_hidden == 0 || embedding_dim == 0 || classifier_hidden == 0) {
    throw ConfigError("layer widths must be positive");
  }
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) ||
      !(adam.epsilon > 0.0)) {
    throw ConfigError("invalid Adam hyperparameters");
  }
}

std::size_t TrainConfig::effective_batch_size(std::size_t total_samples) const {
  if (batch_size > 0) return batch_size;
  return total_samples <= kFullBatchLimit ? total_samples : kLargeBatch;
}

NetworkShape TrainConfig::network_shape(std::size_t input_dim, std::size_t class_count) const {
  return NetworkShape{input_dim, generator_hidden, embedding_dim, classifier_hidden, class_count};
}

double accuracy(const Matrix& probs, std::span<const int> labels) {
  if (labels.empty() || probs.rows() == 0) throw ContractError("accuracy on empty input");
  if (labels.size() != probs.rows()) throw ShapeError("accuracy: label count mismatch");
  const std::vector<int> pred = argmax_rows(probs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

ClassifierAccuracy evaluate(const Model& model, const PrototypeSet& prototypes, const Matrix& features,
                            std::span<const int> labels, double cp_temperature) {
  const Matrix z = generator_forward(model, features);
  return {accuracy(cn_forward(model, z), labels), accuracy(cp_predict(prototypes, z, cp_temperature), labels)};
}

ObjectiveResult compute_objective(const Model& model, const Batch& batch, const TrainConfig& config, Rng& rng,
                                  bool with_gradients) {
  const std::size_t bs = batch.source_count();
  const std::size_t total_rows = batch.features.rows();
  if (bs == 0 || bs >= total_rows) throw ContractError("a batch needs both source and target rows");
  std::vector<std::size_t> source_rows(bs), target_rows(total_rows - bs);
  std::iota(source_rows.begin(), source_rows.end(), 0);
  std::iota(target_rows.begin(), target_rows.end(), bs);
  for (std::size_t r : batch.filtered_rows) {
    if (r < bs || r >= total_rows) throw ContractError("filtered row is not a target row of the batch");
  }

  Tape tape;
  const ModelVars vars = bind_parameters(tape, model);
  Var z = generator_forward(vars, model.shape, tape.constant(batch.features), model.generator.dropout_p, rng, true);
  Var probs = cn_forward(vars, model.shape, z);
  Var probs_source = gather_rows(probs, source_rows);
  Var probs_target = gather_rows(probs, target_rows);

  const ClassPartition partition = make_partition(source_rows, batch.source_labels, batch.filtered_rows,
                                                  batch.filtered_labels, model.shape.class_count);
  Var l_y = cross_entropy_loss(probs_source, batch.source_labels);
  const InterClassTerms inter = inter_class_loss(z, partition, config.lambda1, config.intra_source_scope);
  Var l_intra = intra_class_loss(z, partition, config.lambda2, config.intra_source_scope);
  Var l_em = entropy_loss(probs_target);
  Var total = total_objective(l_y, l_intra, inter.total, l_em, config.terms);

  ObjectiveResult out;
  LossReport& r = out.report;
  r.l_y = l_y.value().item();
  r.l_inter = inter.total.value().item();
  r.l_intra = l_intra.value().item();
  r.l_em = l_em.value().item();
  r.total = total.value().item();
  r.inter_within_source = inter.within_source.value().item();
  r.inter_within_target = inter.within_target.value().item();
  r.inter_cross_domain = inter.cross_domain.value().item();
  out.cn_probs = probs.value();
  if (with_gradients) {
    tape.backward(total);
    for (Var v : vars.all()) out.grads.push_back(v.grad());
  }
  return out;
}

EpochMetrics train_epoch(Model& model, const TrainingData& data, const FilterState& filter,
                         const TrainConfig& config, AdamState& adam, Rng& rng, const TrainHooks* hooks) {
  const std::size_t n_s = data.source_features.rows();
  const std::size_t n_t = data.target_features.rows();
  const std::size_t d = data.dim();
  const std::size_t batch_size = config.effective_batch_size(n_s + n_t);
  const std::size_t n_batches = std::max<std::size_t>(1, (n_s + n_t + batch_size - 1) / batch_size);

  std::vector<std::size_t> source_order(n_s), target_order(n_t);
  std::iota(source_order.begin(), source_order.end(), 0);
  std::iota(target_order.begin(), target_order.end(), 0);
  if (n_batches > 1) {
    std::shuffle(source_order.begin(), source_order.end(), rng);
    std::shuffle(target_order.begin(), target_order.end(), rng);
  }

  std::vector<int> pseudo(n_t, -1);
  for (const auto& s : filter.selected) {
    if (s.index >= n_t) throw ShapeError("filter index out of range for the target set");
    pseudo[s.index] = s.pseudo_label;
  }

  const auto source_chunks = chunk_bounds(n_s, n_batches);
  const auto target_chunks = chunk_bounds(n_t, n_batches);

  EpochMetrics metrics;
  metrics.epoch = filter.epoch;
  metrics.n_filtered = filter.selected.size();
  metrics.n_filtered_classes = filter.class_set.size();
  metrics.filtered_classes = filter.class_set;
  std::size_t used_batches = 0;

  for (std::size_t b = 0; b < n_batches; ++b) {
    const auto [s0, s1] = source_chunks[b];
    const auto [t0, t1] = target_chunks[b];
    const std::size_t bs = s1 - s0, bt = t1 - t0;
    if (bs == 0 || bt == 0) continue;

    Batch batch;
    batch.features = Matrix(bs + bt, d);
    batch.source_labels.resize(bs);
    for (std::size_t i = 0; i < bs; ++i) {
      const std::size_t src = source_order[s0 + i];
      std::copy_n(data.source_features.row(src).begin(), d, batch.features.row(i).begin());
      batch.source_labels[i] = data.source_labels[src];
    }
    for (std::size_t j = 0; j < bt; ++j) {
      const std::size_t tgt = target_order[t0 + j];
      std::copy_n(data.target_features.row(tgt).begin(), d, batch.features.row(bs + j).begin());
      if (pseudo[tgt] >= 0) {
        batch.filtered_rows.push_back(bs + j);
        batch.filtered_labels.push_back(pseudo[tgt]);
      }
    }

    ObjectiveResult obj = compute_objective(model, batch, config, rng, true);
    const LossReport& r = obj.report;
    check_finite(r, filter.epoch);
    if (hooks && hooks->on_forward) hooks->on_forward(obj.cn_probs, r);

    metrics.grad_norm = clip_gradients(obj.grads, config.grad_clip_norm);
    if (!std::isfinite(metrics.grad_norm)) {
      throw NumericError("non-finite gradient at epoch " + std::to_string(filter.epoch));
    }
    adam_step(model.parameters(), obj.grads, adam, config.learning_rate, config.adam);

    LossReport& acc = metrics.losses;
    acc.l_y += r.l_y;
    acc.l_inter += r.l_inter;
    acc.l_intra += r.l_intra;
    acc.l_em += r.l_em;
    acc.total += r.total;
    acc.inter_within_source += r.inter_within_source;
    acc.inter_within_target += r.inter_within_target;
    acc.inter_cross_domain += r.inter_cross_domain;
    ++used_batches;
  }

  if (used_batches > 1) {
    const double inv = 1.0 / static_cast<double>(used_batches);
    LossReport& acc = metrics.losses;
    for (double* v : {&acc.l_y, &acc.l_inter, &acc.l_intra, &acc.l_em, &acc.inter_within_source,
                      &acc.inter_within_target, &acc.inter_cross_domain}) {
      *v *= inv;
    }
    acc.total = total_objective(acc.l_y, acc.l_intra, acc.l_inter, acc.l_em, config.terms);
  }
  return metrics;
}

FitResult fit(const TrainingData& data, const TrainConfig& config, const EvaluationData* evaluation,
              const TrainHooks* hooks) {
  config.validate();
  check_training_data(data);

  std::seed_seq init_seq{config.seed, std::uint64_t{0x9e3779b9}};
  std::seed_seq train_seq{config.seed, std::uint64_t{0x7f4a7c15}};
  Rng init_rng(init_seq);
  Rng train_rng(train_seq);

  FitResult result;
  result.model = init_model(config.network_shape(data.dim(), static_cast<std::size_t>(data.class_count)),
                            config.dropout_p, init_rng);
  AdamState adam = make_adam_state(std::as_const(result.model).parameters());

  const std::vector<int>* eval_labels =
      evaluation && evaluation->target_labels ? &*evaluation->target_labels : nullptr;
  if (eval_labels && eval_labels->size() != data.target_features.rows()) {
    throw ShapeError("evaluation label count differs from target sample count");
  }

  Snapshot snap = take_snapshot(result.model, data, config.cp_temperature);
  std::optional<double> p0;
  if (config.p0_after_warmup == 0) p0 = compute_threshold(snap.cp_source, data.source_labels);

  FilterState accumulated;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    FilterState filter;
    filter.epoch = epoch;
    if (p0) {
      filter = filter_confident_targets(snap.cp_target, *p0, epoch);
      if (config.accumulate_union) {
        filter = accumulate_union(accumulated, filter);
        accumulated = filter;
      }
    }

    EpochMetrics m = train_epoch(result.model, data, filter, config, adam, train_rng, hooks);
    m.epoch = epoch;
    m.p0 = p0;

    snap = take_snapshot(result.model, data, config.cp_temperature);
    if (eval_labels) {
      m.acc_cn = accuracy(cn_forward(result.model, snap.z_target), *eval_labels);
      m.acc_cp = accuracy(snap.cp_target, *eval_labels);
    }
    if (!p0 && epoch == config.p0_after_warmup) p0 = compute_threshold(snap.cp_source, data.source_labels);

    result.history.push_back(std::move(m));
    result.filters.push_back(std::move(filter));
  }
  result.prototypes = std::move(snap.prototypes);
  return result;
}

std::string metrics_to_jsonl(std::span<const EpochMetrics> history) {
  auto to_json = [](const EpochMetrics& m) {
    nlohmann::ordered_json j;
    j["epoch"] = m.epoch;
    j["l_y"] = m.losses.l_y;
    j["l_inter"] = m.losses.l_inter;
    j["l_intra"] = m.losses.l_intra;
    j["l_em"] = m.losses.l_em;
    j["total"] = m.losses.total;
    j["acc_cn"] = m.acc_cn ? nlohmann::ordered_json(*m.acc_cn) : nlohmann::ordered_json(nullptr);
    j["acc_cp"] = m.acc_cp ? nlohmann::ordered_json(*m.acc_cp) : nlohmann::ordered_json(nullptr);
    j["n_filtered"] = m.n_filtered;
    j["n_filtered_classes"] = m.n_filtered_classes;
    j["p0"] = m.p0 ? nlohmann::ordered_json(*m.p0) : nlohmann::ordered_json(nullptr);
    j["filtered_classes"] = m.filtered_classes;
    j["l_inter_within_source"] = m.losses.inter_within_source;
    j["l_inter_within_target"] = m.losses.inter_within_target;
    j["l_inter_cross_domain"] = m.losses.inter_cross_domain;
    j["grad_norm"] = m.grad_norm;
    return j;
  };
  std::string out;
  for (const auto& m : history) out += to_json(m).dump() + "\n";
  if (!history.empty()) {
    auto last = to_json(history.back());
    last["final"] = true;
    out += last.dump() + "\n";
  }
  return out;
}

}  // namespace a2kt
