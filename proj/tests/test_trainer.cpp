#include <cmath>
#include <random>
#include <sstream>
#include <utility>

#include "doctest.h"
#include "json.hpp"
#include "objective_check.hpp"
#include "oracles.hpp"

#include "a2kt/error.hpp"
#include "a2kt/synthdata.hpp"
#include "a2kt/trainer.hpp"

using namespace a2kt;

namespace {

TrainConfig small_config(int epochs = 3) {
  TrainConfig c;
  c.epochs = epochs;
  c.generator_hidden = 16;
  c.embedding_dim = 8;
  c.classifier_hidden = 8;
  return c;
}

PdaTask small_task(std::uint64_t seed = 0) {
  SynthSpec s;
  s.dim = 12;
  s.source_classes = 4;
  s.shared_classes = 2;
  s.source_per_class = 20;
  s.target_per_class = 15;
  s.seed = seed;
  return generate(s);
}

TermMask only(bool ly, bool inter, bool intra, bool em) { return TermMask{ly, inter, intra, em}; }

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
  Matrix p = Matrix::from_rows({{1, -2}, {3, 4}});
  const Matrix before = p;
  std::vector<Matrix*> params{&p};
  std::vector<const Matrix*> cparams{&p};
  AdamState s = make_adam_state(cparams);
  std::vector<Matrix> g{Matrix(2, 2)};
  adam_step(params, g, s, 0.1);
  CHECK(p == before);
  CHECK(s.step == 1);
}

TEST_CASE("adam single step matches the update equations") {
  const double lr = 1e-3, g = 0.37;
  Matrix p(1, 3, 0.5);
  std::vector<Matrix*> params{&p};
  std::vector<const Matrix*> cparams{&p};
  AdamState s = make_adam_state(cparams);
  std::vector<Matrix> grads{Matrix(1, 3, g)};
  adam_step(params, grads, s, lr);
  const double m = 0.1 * g, v = 0.001 * g * g;
  const double m_hat = m / (1 - 0.9), v_hat = v / (1 - 0.999);
  const double expected = 0.5 - lr * m_hat / (std::sqrt(v_hat) + 1e-8);
  for (double x : p.values()) CHECK(x == doctest::Approx(expected).epsilon(1e-14));
  CHECK(std::abs(p(0, 0) - (0.5 - lr)) < 1e-10);

  // Second step, hand-rolled.
  adam_step(params, grads, s, lr);
  const double m2 = 0.9 * m + 0.1 * g, v2 = 0.999 * v + 0.001 * g * g;
  const double expected2 = expected - lr * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.999 * 0.999)) + 1e-8);
  CHECK(p(0, 1) == doctest::Approx(expected2).epsilon(1e-14));
}

TEST_CASE("adam rejects shape mismatches") {
  Matrix p(2, 2);
  std::vector<Matrix*> params{&p};
  std::vector<const Matrix*> cparams{&p};
  AdamState s = make_adam_state(cparams);
  std::vector<Matrix> g{Matrix(2, 3)};
  CHECK_THROWS_AS(adam_step(params, g, s, 0.1), ShapeError);
}

TEST_CASE("gradient clipping") {
  std::vector<Matrix> g{Matrix::from_rows({{30, 0}}), Matrix::from_rows({{40}})};
  CHECK(clip_gradients(g, 5.0) == doctest::Approx(50.0));
  CHECK(g[0](0, 0) == doctest::Approx(3.0));
  CHECK(g[1](0, 0) == doctest::Approx(4.0));

  std::vector<Matrix> small{Matrix::from_rows({{0.3, 0.4}})};
  clip_gradients(small, 5.0);
  CHECK(small[0] == Matrix::from_rows({{0.3, 0.4}}));
  std::vector<Matrix> off{Matrix::from_rows({{30, 40}})};
  clip_gradients(off, 0.0);
  CHECK(off[0](0, 1) == 40.0);
}

TEST_CASE("defaults follow the reference configuration") {
  const TrainConfig c;
  CHECK(c.epochs == 100);
  CHECK(c.learning_rate == 0.0001);
  CHECK(c.lambda1 == 0.1);
  CHECK(c.lambda2 == 0.5);
  CHECK(c.grad_clip_norm == 5.0);
  CHECK(c.dropout_p == 0.1);
  CHECK(c.network_shape(64, 8) == NetworkShape{64, 1024, 512, 512, 8});
  CHECK(c.adam.beta1 == 0.9);
  CHECK(c.adam.beta2 == 0.999);
  CHECK(c.adam.epsilon == 1e-8);
  CHECK(c.cp_temperature == 1.0);
  CHECK(c.intra_source_scope == SourceScope::all);
  CHECK_FALSE(c.accumulate_union);
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lambda1 = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.p0_after_warmup = 100;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  PdaTask t = small_task();
  TrainConfig zero = small_config(0);
  CHECK_THROWS_AS(fit(t.training, zero), ConfigError);
}

TEST_CASE("batch size defaults") {
  TrainConfig c;
  CHECK(c.effective_batch_size(4096) == 4096);
  CHECK(c.effective_batch_size(4097) == 256);
  c.batch_size = 10;
  CHECK(c.effective_batch_size(100) == 10);
}

TEST_CASE("accuracy") {
  const std::vector<int> y{0, 1, 1};
  CHECK(accuracy(Matrix::from_rows({{0.9, 0.1}, {0.2, 0.8}, {0.3, 0.7}}), y) == 1.0);
  CHECK(accuracy(Matrix::from_rows({{0.9, 0.1}, {0.8, 0.2}, {0.3, 0.7}}), y) == doctest::Approx(2.0 / 3.0));
  const std::vector<int> none;
  CHECK_THROWS_AS(accuracy(Matrix(0, 2), none), ContractError);

  std::mt19937_64 rng(41);
  Matrix random = oracle::random_probs(10000, 2, rng);
  std::vector<int> labels(10000);
  for (int& l : labels) l = static_cast<int>(rng() % 2);
  CHECK(std::abs(accuracy(random, labels) - 0.5) <= 0.02);
}

TEST_CASE("full objective gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const oracle::SmallProblem p = oracle::random_small_problem(seed);
    CHECK(oracle::objective_gradient_error(p, 99 + seed) < 1e-5);
  }
}

TEST_CASE("loss report reconciles with the active terms") {
  oracle::SmallProblem p = oracle::random_small_problem(7);
  for (int mask = 0; mask < 16; ++mask) {
    p.config.terms = only(mask & 1, mask & 2, mask & 4, mask & 8);
    Rng rng(1);
    const LossReport r = compute_objective(p.model, p.batch, p.config, rng, false).report;
    CHECK(std::abs(r.total - total_objective(r.l_y, r.l_intra, r.l_inter, r.l_em, p.config.terms)) < 1e-12);
    CHECK(std::abs(r.l_inter - (p.config.lambda1 * (r.inter_within_source + r.inter_within_target) +
                                r.inter_cross_domain)) < 1e-12);
  }
}

TEST_CASE("each term sees only its own rows") {
  oracle::SmallProblem p = oracle::random_small_problem(11);
  const std::size_t ns = p.batch.source_count();
  std::vector<std::size_t> unfiltered;
  for (std::size_t r = ns; r < p.batch.features.rows(); ++r) {
    if (std::find(p.batch.filtered_rows.begin(), p.batch.filtered_rows.end(), r) == p.batch.filtered_rows.end()) {
      unfiltered.push_back(r);
    }
  }
  auto report = [&](const Batch& b) {
    Rng rng(5);
    return compute_objective(p.model, b, p.config, rng, false).report;
  };
  auto perturbed = [&](auto pick) {
    Batch b = p.batch;
    for (std::size_t r = 0; r < b.features.rows(); ++r)
      if (pick(r))
        for (double& v : b.features.row(r)) v += 0.75;
    return report(b);
  };
  const LossReport base = report(p.batch);

  const LossReport target_moved = perturbed([&](std::size_t r) { return r >= ns; });
  CHECK(target_moved.l_y == base.l_y);
  CHECK(target_moved.l_em != base.l_em);

  const LossReport source_moved = perturbed([&](std::size_t r) { return r < ns; });
  CHECK(source_moved.l_em == base.l_em);
  CHECK(source_moved.l_y != base.l_y);

  if (!unfiltered.empty()) {
    const LossReport unfiltered_moved = perturbed(
        [&](std::size_t r) { return std::find(unfiltered.begin(), unfiltered.end(), r) != unfiltered.end(); });
    CHECK(unfiltered_moved.l_inter == base.l_inter);
    CHECK(unfiltered_moved.l_intra == base.l_intra);
    CHECK(unfiltered_moved.l_y == base.l_y);
    CHECK(unfiltered_moved.l_em != base.l_em);
  }
}

TEST_CASE("compute_objective rejects malformed batches") {
  oracle::SmallProblem p = oracle::random_small_problem(3);
  Rng rng(0);
  Batch bad = p.batch;
  bad.filtered_rows = {0};
  bad.filtered_labels = {0};
  CHECK_THROWS_AS(compute_objective(p.model, bad, p.config, rng), ContractError);
  Batch no_target = p.batch;
  no_target.source_labels.resize(no_target.features.rows(), 0);
  no_target.filtered_rows.clear();
  no_target.filtered_labels.clear();
  CHECK_THROWS_AS(compute_objective(p.model, no_target, p.config, rng), ContractError);
}

TEST_CASE("objective decreases over one epoch on a 12-sample task") {
  std::uint64_t seed = 0;
  oracle::SmallProblem p = oracle::random_small_problem(seed);
  while (p.batch.features.rows() != 12) p = oracle::random_small_problem(++seed);
  p.config.learning_rate = 1e-4;
  p.config.dropout_p = 0.0;
  p.model.generator.dropout_p = 0.0;
  const double before = oracle::objective_value(p.model, p, 0);
  Rng rng(0);
  ObjectiveResult r = compute_objective(p.model, p.batch, p.config, rng, true);
  clip_gradients(r.grads, p.config.grad_clip_norm);
  AdamState adam = make_adam_state(std::as_const(p.model).parameters());
  adam_step(p.model.parameters(), r.grads, adam, p.config.learning_rate);
  CHECK(oracle::objective_value(p.model, p, 0) < before);
}

TEST_CASE("removing every term leaves parameters unchanged") {
  PdaTask t = small_task();
  TrainConfig c = small_config(1);
  c.terms = only(false, false, false, false);
  Rng init(3);
  Model m = init_model(c.network_shape(t.training.dim(), 4), c.dropout_p, init);
  const Model before = m;
  AdamState adam = make_adam_state(std::as_const(m).parameters());
  FilterState f = filter_confident_targets(Matrix(t.training.target_features.rows(), 4, 0.25), 0.1, 1);
  Rng rng(4);
  train_epoch(m, t.training, f, c, adam, rng);
  for (std::size_t k = 0; k < 8; ++k) CHECK(*m.parameters()[k] == *before.parameters()[k]);
}

TEST_CASE("source-only training raises source accuracy") {
  PdaTask t = generate(SynthSpec{});
  TrainConfig c;
  c.generator_hidden = 128;
  c.embedding_dim = 64;
  c.classifier_hidden = 64;
  c.learning_rate = 1e-3;
  c.terms = only(true, false, false, false);
  Rng init(0), rng(1);
  Model m = init_model(c.network_shape(t.training.dim(), 8), c.dropout_p, init);
  AdamState adam = make_adam_state(std::as_const(m).parameters());
  auto source_acc = [&] {
    return accuracy(cn_forward(m, generator_forward(m, t.training.source_features)), t.training.source_labels);
  };
  std::vector<double> acc{source_acc()};
  for (int e = 1; e <= 5; ++e) {
    train_epoch(m, t.training, FilterState{}, c, adam, rng);
    acc.push_back(source_acc());
  }
  for (std::size_t e = 1; e < acc.size(); ++e) CHECK(acc[e] > acc[e - 1]);
}

TEST_CASE("fit is deterministic and reports every epoch") {
  PdaTask t = small_task(2);
  TrainConfig c = small_config(4);
  c.seed = 9;
  FitResult a = fit(t.training, c, &t.evaluation);
  FitResult b = fit(t.training, c, &t.evaluation);
  CHECK(metrics_to_jsonl(a.history) == metrics_to_jsonl(b.history));
  for (std::size_t k = 0; k < 8; ++k) CHECK(*a.model.parameters()[k] == *b.model.parameters()[k]);
  CHECK(a.filters == b.filters);
  REQUIRE(a.history.size() == 4);
  for (std::size_t e = 0; e < 4; ++e) {
    const EpochMetrics& m = a.history[e];
    CHECK(m.epoch == static_cast<int>(e) + 1);
    REQUIRE(m.acc_cn);
    REQUIRE(m.acc_cp);
    CHECK(*m.acc_cn >= 0.0);
    CHECK(*m.acc_cp <= 1.0);
    REQUIRE(m.p0);
    CHECK(*m.p0 == *a.history[0].p0);
    CHECK(m.n_filtered == a.filters[e].selected.size());
  }
  c.seed = 10;
  CHECK(metrics_to_jsonl(fit(t.training, c, &t.evaluation).history) != metrics_to_jsonl(a.history));
}

TEST_CASE("training only changes G and C_N weights") {
  PdaTask t = small_task(3);
  TrainConfig c = small_config(2);
  FitResult r = fit(t.training, c);
  std::seed_seq seq{c.seed, std::uint64_t{0x9e3779b9}};
  Rng seeded(seq);
  const Model initial = init_model(c.network_shape(t.training.dim(), 4), c.dropout_p, seeded);
  std::size_t changed = 0;
  for (std::size_t k = 0; k < 8; ++k) changed += *r.model.parameters()[k] == *initial.parameters()[k] ? 0 : 1;
  CHECK(changed == 8);
  CHECK_FALSE(r.history.front().acc_cp.has_value());
  CHECK(r.prototypes.centers == compute_prototypes(generator_forward(r.model, t.training.source_features),
                                                   t.training.source_labels, 4)
                                    .centers);
}

TEST_CASE("p0 warmup and union accumulation") {
  PdaTask t = small_task(4);
  TrainConfig c = small_config(4);
  c.p0_after_warmup = 2;
  FitResult r = fit(t.training, c);
  CHECK_FALSE(r.history[0].p0.has_value());
  CHECK_FALSE(r.history[1].p0.has_value());
  CHECK(r.history[0].n_filtered == 0);
  REQUIRE(r.history[2].p0.has_value());
  CHECK(*r.history[3].p0 == *r.history[2].p0);

  TrainConfig u = small_config(5);
  u.accumulate_union = true;
  FitResult ru = fit(t.training, u);
  for (std::size_t e = 1; e < ru.filters.size(); ++e) {
    const auto prev = ru.filters[e - 1].indices();
    const auto cur = ru.filters[e].indices();
    CHECK(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
  }
}

TEST_CASE("minibatch training runs and averages losses") {
  PdaTask t = small_task(5);
  TrainConfig c = small_config(2);
  c.batch_size = 32;
  FitResult r = fit(t.training, c);
  CHECK(std::isfinite(r.history.back().losses.total));
  const LossReport& l = r.history.back().losses;
  CHECK(std::abs(l.total - total_objective(l.l_y, l.l_intra, l.l_inter, l.l_em)) < 1e-12);
}

TEST_CASE("forward hook sees normalized probabilities") {
  PdaTask t = small_task(6);
  TrainConfig c = small_config(3);
  int calls = 0;
  double worst = 0.0;
  TrainHooks hooks;
  hooks.on_forward = [&](const Matrix& probs, const LossReport& r) {
    ++calls;
    for (std::size_t i = 0; i < probs.rows(); ++i) {
      double s = 0.0;
      for (double v : probs.row(i)) s += v;
      worst = std::max(worst, std::abs(s - 1.0));
    }
    CHECK(r.l_em >= 0.0);
    CHECK(r.l_em <= std::log(4.0) + 1e-12);
  };
  fit(t.training, c, nullptr, &hooks);
  CHECK(calls == 3);
  CHECK(worst < 1e-9);
}

TEST_CASE("metrics lines") {
  PdaTask t = small_task(7);
  FitResult r = fit(t.training, small_config(2), &t.evaluation);
  std::istringstream in(metrics_to_jsonl(r.history));
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
  REQUIRE(rows.size() == 3);
  for (const char* key : {"epoch", "l_y", "l_inter", "l_intra", "l_em", "total", "acc_cn", "acc_cp", "n_filtered",
                          "n_filtered_classes", "p0"}) {
    CHECK(rows[0].contains(key));
  }
  CHECK(rows[2]["final"] == true);
  CHECK(rows[2]["epoch"] == 2);
  CHECK_FALSE(rows[1].contains("final"));
  CHECK(metrics_to_jsonl(std::vector<EpochMetrics>{}).empty());
}

TEST_CASE("mismatched training data is rejected") {
  PdaTask t = small_task();
  t.training.target_features = Matrix(5, 3);
  CHECK_THROWS_AS(fit(t.training, small_config()), ShapeError);
  PdaTask e = small_task();
  EvaluationData wrong;
  wrong.target_labels = std::vector<int>{0};
  CHECK_THROWS_AS(fit(e.training, small_config(), &wrong), ShapeError);
}

}  // TEST_SUITE
