#pragma once

// Experiment orchestration: joint training, the split, specialization
// training, the four baselines, seed repetition and aggregation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitrl/envs.hpp"
#include "splitrl/nn.hpp"
#include "splitrl/ppo.hpp"
#include "splitrl/split.hpp"

namespace splitrl {

enum class Variant { gradvar, random_split, full_share, no_share, append_onehot };

std::string to_string(Variant variant);
Variant parse_variant(const std::string& name);
bool is_splitting(Variant variant);

/// Axes of the jt x sp grid plus the setting reused by the random baseline.
struct GridSpec {
  std::vector<std::size_t> jt_values{10, 50, 100};
  std::vector<double> sp_values{0.05, 0.25, 0.50};
  std::size_t random_jt = 50;
  double random_sp = 0.25;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string suite = "walker";
  std::vector<TaskSpec> tasks;
  Variant variant = Variant::gradvar;
  std::size_t jt_iterations = 50;
  double sp_fraction = 0.25;  // fraction of policy weights that get per-task copies
  std::size_t total_iterations = 200;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<std::size_t> hidden{64, 64, 64};
  PPOConfig ppo;
  bool per_task_value = false;  // reserved; per-task value networks are not implemented
  std::string output_dir = "runs";
  GridSpec grid;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

/// Iterations of joint training that feed the specialization metric.
inline constexpr std::size_t kMetricWindow = MetricAccumulator::kDefaultWindow;
/// Trailing iterations averaged into the final-performance statistic.
inline constexpr std::size_t kFinalWindow = 10;

struct IterationRow {
  std::size_t iteration = 0;
  std::size_t task_id = 0;
  double mean_return = 0.0;
  std::size_t episode_count = 0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
};

struct RunRecord {
  std::uint64_t seed = 0;
  std::vector<IterationRow> rows;  // ordered by (iteration, task)
  std::optional<ShareMask> mask;
  std::optional<VarianceVector> metric;
  std::vector<std::uint64_t> env_steps;  // per task, counted at env_step
  std::size_t policy_input_dim = 0;
  std::size_t policy_size = 0;
};

struct SummaryRow {
  std::size_t iteration = 0;
  double mean_over_seeds = 0.0;
  double std_over_seeds = 0.0;
  long task_id = -1;  // -1: average over tasks
};

struct FinalPerformance {
  long task_id = -1;
  double mean_over_seeds = 0.0;
  double std_over_seeds = 0.0;
};

struct Summary {
  std::vector<SummaryRow> rows;
  std::vector<FinalPerformance> final;  // one per task, then task -1
};

/// Called after every iteration's update with each task's policy parameters.
using IterationObserver =
    std::function<void(std::size_t iteration, std::span<const ParamVector> task_params)>;

struct RunOptions {
  IterationObserver observer;
  bool verbose = false;  // one progress line per iteration on stderr
};

/// Trains one seed of the configured variant.
RunRecord run_seed(const ExperimentConfig& config, std::uint64_t seed, const RunOptions& options = {});

struct ExperimentResult {
  std::vector<RunRecord> records;
  Summary summary;
};

/// Validates the config, trains every seed, aggregates.
ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// Per-iteration mean/std across seeds, per task and task-averaged, and the
/// final-performance rows. Rejects records on different iteration grids.
Summary aggregate_runs(std::span<const RunRecord> records);

/// Mean over the last kFinalWindow iterations of one record's return,
/// for one task or (task_id < 0) averaged over tasks.
double final_performance(const RunRecord& record, long task_id = -1);

/// jt x sp grid of gradvar cells followed by full_share, no_share,
/// random_split and append_onehot.
std::vector<ExperimentConfig> make_grid(const ExperimentConfig& base);

// Artifacts ---------------------------------------------------------------

/// run_seed<seed>.csv: iteration,task_id,mean_return,episode_count,policy_loss,value_loss
void write_run_csv(const std::filesystem::path& path, const RunRecord& record);
RunRecord read_run_csv(const std::filesystem::path& path);

/// summary.csv: iteration,mean_over_seeds,std_over_seeds,task_id
void write_summary_csv(const std::filesystem::path& path, const Summary& summary);
/// final_performance.csv: task_id,mean_over_seeds,std_over_seeds
void write_final_csv(const std::filesystem::path& path, const Summary& summary);
/// Aligned plain-text rendering of the final-performance rows.
std::string format_final_table(const Summary& summary, std::span<const std::string> task_names);

/// Writes config, manifest, per-seed CSVs, mask artifacts and summaries.
void write_experiment(const std::filesystem::path& dir, const ExperimentConfig& config,
                      const ExperimentResult& result);

/// Re-aggregates every run_seed*.csv in dir and rewrites the summaries.
Summary report_directory(const std::filesystem::path& dir);

std::filesystem::path run_csv_name(std::uint64_t seed);

}  // namespace splitrl
