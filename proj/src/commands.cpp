#include "a2kt/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "CLI11.hpp"

#include "a2kt/error.hpp"

namespace a2kt {
namespace {

std::filesystem::path pick(const std::filesystem::path& explicit_path, const std::filesystem::path& dir,
                           const char* name) {
  if (!explicit_path.empty()) return explicit_path;
  if (!dir.empty()) return dir / name;
  return {};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

double final_or_zero(const std::optional<double>& v) { return v.value_or(0.0); }

RunRow run_one(const PdaTask& task, const TrainConfig& config, std::string variant, std::ostream& log) {
  RunRow row;
  row.variant = std::move(variant);
  row.lambda1 = config.lambda1;
  row.lambda2 = config.lambda2;
  row.seed = config.seed;
  try {
    const FitResult r = fit(task.training, config, &task.evaluation);
    row.acc_cn = final_or_zero(r.history.back().acc_cn);
    row.acc_cp = final_or_zero(r.history.back().acc_cp);
  } catch (const NumericError& e) {
    row.completed = false;
    row.error = e.what();
  }
  log << row.variant << " seed=" << row.seed << " lambda1=" << row.lambda1 << " lambda2=" << row.lambda2
      << (row.completed ? "" : " FAILED: " + row.error) << " acc_cn=" << row.acc_cn << " acc_cp=" << row.acc_cp
      << '\n';
  return row;
}

void require_eval_labels(const PdaTask& task) {
  if (!task.evaluation.target_labels) {
    throw ConfigError("this command needs target evaluation labels (target_eval.feat)");
  }
}

}  // namespace

PdaTask load_task(const DataPaths& paths) {
  const auto source = pick(paths.source, paths.dir, "source.feat");
  const auto target = pick(paths.target, paths.dir, "target.feat");
  if (source.empty() || target.empty()) throw ConfigError("source and target feature files are required");
  LabeledSet src = load_feature_file(source);
  LabeledSet tgt = load_feature_file(target);
  if (!src.labeled()) throw ParseError(source.string() + ": source set must be labeled");
  std::optional<std::vector<int>> eval_labels;
  if (tgt.labeled()) {
    // A labeled target file supplies evaluation labels only.
    eval_labels = std::move(tgt.labels);
    tgt.labels.reset();
  }
  PdaTask task = make_task(std::move(src), std::move(tgt));
  std::filesystem::path eval = paths.target_eval;
  if (eval.empty() && !paths.dir.empty() && std::filesystem::exists(paths.dir / "target_eval.feat")) {
    eval = paths.dir / "target_eval.feat";
  }
  if (!eval.empty()) {
    LabeledSet e = load_feature_file(eval);
    if (!e.labeled()) throw ParseError(eval.string() + ": evaluation file has no labels");
    if (e.size() != task.training.target_features.rows()) {
      throw ParseError(eval.string() + ": sample count differs from the target file");
    }
    eval_labels = std::move(e.labels);
  }
  task.evaluation.target_labels = std::move(eval_labels);
  const auto issues = validate_task(task);
  if (!issues.empty()) {
    std::string msg = "invalid task:";
    for (const auto& s : issues) msg += "\n  " + s;
    throw ConfigError(msg);
  }
  return task;
}

void cmd_gen_data(const SynthSpec& spec, const std::filesystem::path& out) {
  if (out.empty()) throw ConfigError("an output directory is required");
  export_task(generate(spec), out);
}

FitResult cmd_train(const TrainOptions& options, std::ostream& log) {
  const PdaTask task = load_task(options.data);
  FitResult r = fit(task.training, options.config, &task.evaluation);
  if (!options.metrics.empty()) write_text(options.metrics, metrics_to_jsonl(r.history));
  if (!options.checkpoint.empty()) {
    if (options.checkpoint.has_parent_path()) std::filesystem::create_directories(options.checkpoint.parent_path());
    save_checkpoint(options.checkpoint, Checkpoint{r.model, r.prototypes, options.config.cp_temperature});
  }
  const EpochMetrics& last = r.history.back();
  log << "epochs=" << last.epoch << " total=" << last.losses.total << " n_filtered=" << last.n_filtered
      << " n_filtered_classes=" << last.n_filtered_classes;
  if (last.acc_cn) log << " acc_cn=" << *last.acc_cn << " acc_cp=" << *last.acc_cp;
  log << '\n';
  return r;
}

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_ly: return "no_ly";
    case Ablation::no_linter: return "no_linter";
    case Ablation::no_lintra: return "no_lintra";
    case Ablation::no_lem: return "no_lem";
  }
  return "?";
}

TrainConfig apply_ablation(TrainConfig config, Ablation a) {
  switch (a) {
    case Ablation::full: break;
    case Ablation::no_ly: config.terms.l_y = false; break;
    case Ablation::no_linter: config.terms.l_inter = false; break;
    case Ablation::no_lintra: config.terms.l_intra = false; break;
    case Ablation::no_lem: config.terms.l_em = false; break;
  }
  return config;
}

std::vector<RunRow> cmd_ablate(const AblateOptions& options, std::ostream& log) {
  if (options.seeds.empty()) throw ConfigError("at least one seed is required");
  const PdaTask task = load_task(options.data);
  require_eval_labels(task);
  std::vector<RunRow> rows;
  for (Ablation a : {Ablation::full, Ablation::no_ly, Ablation::no_linter, Ablation::no_lintra, Ablation::no_lem}) {
    for (std::uint64_t seed : options.seeds) {
      TrainConfig c = apply_ablation(options.base, a);
      c.seed = seed;
      rows.push_back(run_one(task, c, ablation_name(a), log));
    }
  }
  return rows;
}

std::string format_ablation_table(const std::vector<RunRow>& rows) {
  std::ostringstream os;
  os.precision(std::numeric_limits<double>::max_digits10);
  os << "variant,seed,acc_cn,acc_cp,status\n";
  std::vector<std::string> order;
  for (const auto& r : rows) {
    os << r.variant << ',' << r.seed << ',' << r.acc_cn << ',' << r.acc_cp << ','
       << (r.completed ? "ok" : "nonfinite") << '\n';
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
  }
  for (const auto& v : order) {
    double cn = 0.0, cp = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows) {
      if (r.variant != v || !r.completed) continue;
      cn += r.acc_cn;
      cp += r.acc_cp;
      ++n;
    }
    if (n) os << "# mean " << v << " acc_cn=" << cn / n << " acc_cp=" << cp / n << '\n';
  }
  return os.str();
}

SweepResult cmd_sweep(const SweepOptions& options, std::ostream& log) {
  if (options.lambda1.empty() || options.lambda2.empty() || options.seeds.empty()) {
    throw ConfigError("sweep grid is empty");
  }
  const PdaTask task = load_task(options.data);
  require_eval_labels(task);
  SweepResult result;
  for (double l1 : options.lambda1) {
    for (double l2 : options.lambda2) {
      for (std::uint64_t seed : options.seeds) {
        TrainConfig c = options.base;
        c.lambda1 = l1;
        c.lambda2 = l2;
        c.seed = seed;
        result.rows.push_back(run_one(task, c, "grid", log));
      }
    }
  }
  double lo_cn = 1.0, hi_cn = 0.0, lo_cp = 1.0, hi_cp = 0.0;
  bool any = false;
  for (const auto& r : result.rows) {
    if (!r.completed) continue;
    any = true;
    lo_cn = std::min(lo_cn, r.acc_cn);
    hi_cn = std::max(hi_cn, r.acc_cn);
    lo_cp = std::min(lo_cp, r.acc_cp);
    hi_cp = std::max(hi_cp, r.acc_cp);
  }
  if (any) {
    result.spread_cn = hi_cn - lo_cn;
    result.spread_cp = hi_cp - lo_cp;
  }
  return result;
}

std::string format_sweep_table(const SweepResult& result) {
  std::ostringstream os;
  os.precision(std::numeric_limits<double>::max_digits10);
  os << "lambda1,lambda2,seed,acc_cn,acc_cp,status\n";
  for (const auto& r : result.rows) {
    os << r.lambda1 << ',' << r.lambda2 << ',' << r.seed << ',' << r.acc_cn << ',' << r.acc_cp << ','
       << (r.completed ? "ok" : "nonfinite") << '\n';
  }
  os << "# spread acc_cn=" << result.spread_cn << " acc_cp=" << result.spread_cp << '\n';
  return os.str();
}

EvalReport cmd_eval(const EvalOptions& options) {
  if (options.checkpoint.empty() || options.data.empty()) throw ConfigError("checkpoint and data are required");
  const Checkpoint ck = load_checkpoint(options.checkpoint);
  const LabeledSet data = load_feature_file(options.data);
  if (data.dim() != ck.model.shape.input_dim) {
    throw ShapeError("checkpoint expects " + std::to_string(ck.model.shape.input_dim) +
                     "-dimensional features but " + options.data.string() + " has " + std::to_string(data.dim()));
  }
  if (static_cast<std::size_t>(data.class_count) != ck.model.shape.class_count) {
    throw ShapeError("checkpoint has " + std::to_string(ck.model.shape.class_count) + " classes but " +
                     options.data.string() + " declares " + std::to_string(data.class_count));
  }
  PrototypeSet prototypes;
  if (!options.source.empty()) {
    const LabeledSet src = load_feature_file(options.source);
    if (!src.labeled()) throw ParseError(options.source.string() + ": source set must be labeled");
    if (src.dim() != ck.model.shape.input_dim) throw ShapeError("source dimension does not match the checkpoint");
    prototypes = compute_prototypes(generator_forward(ck.model, src.features), *src.labels, ck.model.shape.class_count);
  } else if (ck.prototypes) {
    prototypes = *ck.prototypes;
  } else {
    throw ConfigError("checkpoint carries no prototypes; pass --source");
  }

  const Matrix z = generator_forward(ck.model, data.features);
  EvalReport report;
  report.samples = data.size();
  report.embedding_dim = z.cols();
  if (data.labeled()) {
    report.accuracy = ClassifierAccuracy{accuracy(cn_forward(ck.model, z), *data.labels),
                                         accuracy(cp_predict(prototypes, z, ck.cp_temperature), *data.labels)};
  }
  if (!options.dump_embeddings.empty()) {
    if (options.dump_embeddings.has_parent_path()) {
      std::filesystem::create_directories(options.dump_embeddings.parent_path());
    }
    write_feature_file(options.dump_embeddings, LabeledSet{z, data.labels, data.class_count});
  }
  return report;
}

// ---------------------------------------------------------------------------
// Command line

namespace {

void add_data_flags(CLI::App* cmd, DataPaths& paths) {
  cmd->add_option("--data", paths.dir, "Task directory with source.feat, target.feat, target_eval.feat");
  cmd->add_option("--source", paths.source, "Labeled source feature file (overrides --data)");
  cmd->add_option("--target", paths.target, "Unlabeled target feature file (overrides --data)");
  cmd->add_option("--target-eval", paths.target_eval, "Labeled target file used for accuracy only");
}

void add_train_flags(CLI::App* cmd, TrainConfig& c, bool with_seed) {
  cmd->add_option("--lambda1", c.lambda1, "Weight of the within-domain inter-class terms")->capture_default_str();
  cmd->add_option("--lambda2", c.lambda2, "Weight of the intra-class compactness loss")->capture_default_str();
  cmd->add_option("--epochs", c.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--lr", c.learning_rate, "Adam learning rate")->capture_default_str();
  if (with_seed) cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  cmd->add_option("--batch-size", c.batch_size, "Samples per batch; 0 = full batch up to 4096, else 256")
      ->capture_default_str();
  cmd->add_flag("--no-ly", [&c](std::int64_t) { c.terms.l_y = false; }, "Drop the source cross-entropy");
  cmd->add_flag("--no-linter", [&c](std::int64_t) { c.terms.l_inter = false; }, "Drop the inter-class loss");
  cmd->add_flag("--no-lintra", [&c](std::int64_t) { c.terms.l_intra = false; }, "Drop the intra-class loss");
  cmd->add_flag("--no-lem", [&c](std::int64_t) { c.terms.l_em = false; }, "Drop the entropy regularizer");
  cmd->add_option("--cp-temperature", c.cp_temperature, "Prototype classifier softmax temperature")
      ->capture_default_str();
  cmd->add_option("--grad-clip", c.grad_clip_norm, "Global gradient-norm clip; <= 0 disables")->capture_default_str();
  cmd->add_option_function<std::string>(
         "--intra-source-scope",
         [&c](const std::string& v) { c.intra_source_scope = v == "filtered" ? SourceScope::filtered : SourceScope::all; },
         "Source classes in the alignment losses: all or filtered (default all)")
      ->check(CLI::IsMember({"all", "filtered"}));
  cmd->add_flag("--accumulate-union", c.accumulate_union, "Keep every target ever selected");
  cmd->add_option("--p0-after-warmup", c.p0_after_warmup, "Calibrate p0 after this many epochs")->capture_default_str();
  cmd->add_option("--generator-hidden", c.generator_hidden, "Generator hidden width")->capture_default_str();
  cmd->add_option("--embedding-dim", c.embedding_dim, "Embedding width")->capture_default_str();
  cmd->add_option("--classifier-hidden", c.classifier_hidden, "Classifier hidden width")->capture_default_str();
  cmd->add_option("--dropout", c.dropout_p, "Generator dropout probability")->capture_default_str();
  cmd->add_option("--adam-beta1", c.adam.beta1, "Adam beta1")->capture_default_str();
  cmd->add_option("--adam-beta2", c.adam.beta2, "Adam beta2")->capture_default_str();
  cmd->add_option("--adam-eps", c.adam.epsilon, "Adam epsilon")->capture_default_str();
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"A2KT partial domain adaptation on feature vectors"};
  app.require_subcommand(1);

  SynthSpec spec;
  std::filesystem::path gen_out;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic partial domain adaptation task");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", spec.seed, "Random seed")->capture_default_str();
  gen->add_option("--dim", spec.dim, "Feature dimension")->capture_default_str();
  gen->add_option("--source-classes", spec.source_classes, "Source class count")->capture_default_str();
  gen->add_option("--shared-classes", spec.shared_classes, "Classes present in the target")->capture_default_str();
  gen->add_option("--source-per-class", spec.source_per_class, "Source samples per class")->capture_default_str();
  gen->add_option("--target-per-class", spec.target_per_class, "Target samples per class")->capture_default_str();
  gen->add_option("--cluster-std", spec.cluster_std, "Cluster standard deviation")->capture_default_str();
  gen->add_option("--center-distance", spec.center_distance, "Distance between class centers")->capture_default_str();
  gen->add_option("--shift-magnitude", spec.shift_magnitude, "Target translation length")->capture_default_str();
  gen->add_option("--shift-angle", spec.shift_angle_deg, "Target rotation angle in degrees")->capture_default_str();

  TrainOptions train_opts;
  auto* train = app.add_subcommand("train", "Train the model and write checkpoint and metrics");
  add_data_flags(train, train_opts.data);
  add_train_flags(train, train_opts.config, true);
  train->add_option("--checkpoint", train_opts.checkpoint, "Checkpoint output path");
  train->add_option("--metrics", train_opts.metrics, "JSON-lines metrics output path");

  EvalOptions eval_opts;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a feature file");
  eval->add_option("--checkpoint", eval_opts.checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", eval_opts.data, "Feature file to evaluate")->required();
  eval->add_option("--source", eval_opts.source, "Recompute prototypes from this labeled source file");
  eval->add_option("--dump-embeddings", eval_opts.dump_embeddings, "Write generator embeddings here");

  AblateOptions ablate_opts;
  std::filesystem::path ablate_out;
  auto* ablate = app.add_subcommand("ablate", "Full model versus single-term removals");
  add_data_flags(ablate, ablate_opts.data);
  add_train_flags(ablate, ablate_opts.base, false);
  ablate->add_option("--seeds", ablate_opts.seeds, "Seeds")->capture_default_str();
  ablate->add_option("--out", ablate_out, "Also write the table here");

  SweepOptions sweep_opts;
  std::filesystem::path sweep_out;
  auto* sweep = app.add_subcommand("sweep", "Grid over lambda1 x lambda2");
  add_data_flags(sweep, sweep_opts.data);
  add_train_flags(sweep, sweep_opts.base, false);
  sweep->add_option("--lambda1-grid", sweep_opts.lambda1, "lambda1 values")->capture_default_str();
  sweep->add_option("--lambda2-grid", sweep_opts.lambda2, "lambda2 values")->capture_default_str();
  sweep->add_option("--seeds", sweep_opts.seeds, "Seeds")->capture_default_str();
  sweep->add_option("--out", sweep_out, "Also write the table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      cmd_gen_data(spec, gen_out);
    } else if (*train) {
      cmd_train(train_opts, std::cerr);
    } else if (*eval) {
      const EvalReport r = cmd_eval(eval_opts);
      if (r.accuracy) {
        std::cout << "acc_cn " << r.accuracy->cn << "\nacc_cp " << r.accuracy->cp << '\n';
      } else {
        std::cerr << "data is unlabeled; no accuracy reported\n";
      }
    } else if (*ablate) {
      const std::string table = format_ablation_table(cmd_ablate(ablate_opts, std::cerr));
      std::cout << table;
      if (!ablate_out.empty()) write_text(ablate_out, table);
    } else if (*sweep) {
      const std::string table = format_sweep_table(cmd_sweep(sweep_opts, std::cerr));
      std::cout << table;
      if (!sweep_out.empty()) write_text(sweep_out, table);
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace a2kt
