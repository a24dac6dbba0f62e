#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "a2kt/synthdata.hpp"
#include "a2kt/trainer.hpp"

namespace a2kt {

// Where a command finds its feature files: a task directory as written by
// gen-data, with individual files overriding its entries.
struct DataPaths {
  std::filesystem::path dir;
  std::filesystem::path source;
  std::filesystem::path target;
  std::filesystem::path target_eval;
};

PdaTask load_task(const DataPaths& paths);

void cmd_gen_data(const SynthSpec& spec, const std::filesystem::path& out);

struct TrainOptions {
  DataPaths data;
  TrainConfig config;
  std::filesystem::path checkpoint;  // empty: not written
  std::filesystem::path metrics;     // empty: not written
};

FitResult cmd_train(const TrainOptions& options, std::ostream& log);

enum class Ablation { full, no_ly, no_linter, no_lintra, no_lem };
const char* ablation_name(Ablation a);
TrainConfig apply_ablation(TrainConfig config, Ablation a);

struct RunRow {
  std::string variant;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  std::uint64_t seed = 0;
  double acc_cn = 0.0;
  double acc_cp = 0.0;
  bool completed = true;
  std::string error;
};

struct AblateOptions {
  DataPaths data;
  TrainConfig base;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
};

// Full model and the four single-term removals, every variant on every seed.
std::vector<RunRow> cmd_ablate(const AblateOptions& options, std::ostream& log);
std::string format_ablation_table(const std::vector<RunRow>& rows);

struct SweepOptions {
  DataPaths data;
  TrainConfig base;
  std::vector<double> lambda1{0.0001, 0.01, 0.05};
  std::vector<double> lambda2{1.0, 2.0, 3.0};
  std::vector<std::uint64_t> seeds{0, 1};
};

struct SweepResult {
  std::vector<RunRow> rows;
  double spread_cn = 0.0;  // max - min over completed runs
  double spread_cp = 0.0;
};

SweepResult cmd_sweep(const SweepOptions& options, std::ostream& log);
std::string format_sweep_table(const SweepResult& result);

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data;            // feature file to score
  std::filesystem::path source;          // optional: recompute prototypes from this labeled set
  std::filesystem::path dump_embeddings; // optional
};

struct EvalReport {
  std::optional<ClassifierAccuracy> accuracy;  // absent for unlabeled data
  std::size_t samples = 0;
  std::size_t embedding_dim = 0;
};

EvalReport cmd_eval(const EvalOptions& options);

// Parses argv and dispatches; returns the process exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace a2kt
