#include "splitrl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace splitrl {

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::gradvar: return "gradvar";
    case Variant::random_split: return "random_split";
    case Variant::full_share: return "full_share";
    case Variant::no_share: return "no_share";
    case Variant::append_onehot: return "append_onehot";
  }
  throw std::logic_error("unknown variant");
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::gradvar, Variant::random_split, Variant::full_share, Variant::no_share,
                    Variant::append_onehot}) {
    if (to_string(v) == name) return v;
  }
  throw std::invalid_argument("unknown variant '" + name + "'");
}

bool is_splitting(Variant variant) {
  return variant == Variant::gradvar || variant == Variant::random_split;
}

void ExperimentConfig::validate() const {
  const std::string where = "config '" + name + "': ";
  auto fail = [&](const std::string& msg) { throw std::invalid_argument(where + msg); };

  if (tasks.empty()) fail("no tasks");
  for (const auto& t : tasks) validate_task(t);
  for (const auto& t : tasks) {
    if (t.obs_dim() != tasks.front().obs_dim() || t.act_dim() != tasks.front().act_dim()) {
      fail("all tasks must share observation and action dimensions");
    }
  }
  if (seeds.empty()) fail("at least one seed is required");
  if (total_iterations == 0) fail("total_iterations must be positive");
  if (!(sp_fraction >= 0.0 && sp_fraction <= 1.0)) fail("sp_fraction must lie in [0, 1]");
  if (jt_iterations > total_iterations) fail("jt_iterations exceeds total_iterations");
  for (std::size_t h : hidden) {
    if (h == 0) fail("hidden widths must be positive");
  }
  if (per_task_value) fail("per_task_value is reserved; per-task value networks are not supported");
  ppo.validate();

  switch (variant) {
    case Variant::full_share:
      if (sp_fraction != 0.0) fail("full_share requires sp_fraction 0");
      break;
    case Variant::no_share:
      if (jt_iterations != 0 || sp_fraction != 1.0) fail("no_share requires jt_iterations 0 and sp_fraction 1");
      break;
    case Variant::gradvar:
    case Variant::random_split:
      if (tasks.size() < 2) fail("splitting variants need at least two tasks");
      if (jt_iterations < kMetricWindow) {
        fail("jt_iterations must cover the " + std::to_string(kMetricWindow) + "-iteration metric window");
      }
      if (jt_iterations + kMetricWindow > total_iterations) {
        fail("jt_iterations + " + std::to_string(kMetricWindow) + " must not exceed total_iterations");
      }
      break;
    case Variant::append_onehot:
      break;
  }
}

namespace {

enum class Phase { joint, independent, specialized };

double mean_of(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double std_of(std::span<const double> xs, double mean) {
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

}  // namespace

RunRecord run_seed(const ExperimentConfig& config, std::uint64_t seed, const RunOptions& options) {
  const std::size_t n_tasks = config.tasks.size();
  const std::size_t obs_dim = config.tasks.front().obs_dim();
  const std::size_t act_dim = config.tasks.front().act_dim();
  const bool onehot = config.variant == Variant::append_onehot;
  const std::size_t batch_size = config.ppo.batch_size;

  const ParamLayout layout(obs_dim + (onehot ? n_tasks : 0), config.hidden, act_dim, true);
  const ParamLayout value_layout(obs_dim, config.hidden, 1, false);

  Rng init_rng = make_stream(seed, 0, 0, StreamPurpose::policy_init);
  ParamVector joint = init_params(layout, init_rng);
  Rng value_rng = make_stream(seed, 0, 0, StreamPurpose::value_init);
  ValueNet vnet{value_layout, init_params(value_layout, value_rng)};

  AdamState adam = AdamState::zeros(layout.size(), {config.ppo.policy_lr});
  AdamState value_adam = AdamState::zeros(value_layout.size(), {config.ppo.value_lr});

  // no_share: independent copies of the same initial network.
  std::vector<ParamVector> independent;
  std::vector<AdamState> independent_adam;
  if (config.variant == Variant::no_share) {
    independent.assign(n_tasks, joint);
    independent_adam.assign(n_tasks, adam);
  }

  std::optional<SplitPolicy> split;
  std::optional<SplitOptimizer> split_opt;
  MetricAccumulator metric(kMetricWindow);

  RunRecord record;
  record.seed = seed;
  record.env_steps.assign(n_tasks, 0);
  record.policy_input_dim = layout.input_dim();
  record.policy_size = layout.size();
  record.rows.reserve(config.total_iterations * n_tasks);

  const bool splitting = is_splitting(config.variant);
  std::vector<ParamVector> task_params(n_tasks);

  for (std::size_t it = 0; it < config.total_iterations; ++it) {
    Phase phase = Phase::joint;
    if (config.variant == Variant::no_share) {
      phase = Phase::independent;
    } else if (splitting && it >= config.jt_iterations) {
      phase = Phase::specialized;
    }

    if (phase == Phase::specialized && !split) {
      ShareMask mask;
      if (config.variant == Variant::gradvar) {
        mask = select_shared_mask(metric.averaged(), shared_count_for(config.sp_fraction, layout.size()));
      } else {
        Rng mask_rng = make_stream(seed, 0, it, StreamPurpose::random_mask);
        mask = random_mask(layout.size(), 1.0 - config.sp_fraction, mask_rng);
      }
      record.mask = mask;
      record.metric = metric.averaged();
      split.emplace(layout, std::move(mask), joint, n_tasks);
      split_opt = SplitOptimizer::from_joint(adam, n_tasks);
    }

    for (std::size_t i = 0; i < n_tasks; ++i) {
      switch (phase) {
        case Phase::joint: task_params[i] = joint; break;
        case Phase::independent: task_params[i] = independent[i]; break;
        case Phase::specialized: task_params[i] = split->materialize(i); break;
      }
    }

    std::vector<RolloutBatch> batches;
    std::vector<MinibatchSchedule> schedules;
    batches.reserve(n_tasks);
    schedules.reserve(n_tasks);
    for (std::size_t i = 0; i < n_tasks; ++i) {
      const TaskSpec& task = config.tasks[i];
      const TaskEncoding encoding = onehot ? TaskEncoding{i, n_tasks} : TaskEncoding{};
      Rng rollout_rng = make_stream(seed, task.seed, it, StreamPurpose::rollout);
      batches.push_back(collect_rollouts(task, task_params[i], layout, encoding, i, batch_size, rollout_rng));
      record.env_steps[i] += batches.back().env_steps;
      gae_advantages(batches.back(), vnet, config.ppo.discount, config.ppo.gae_lambda);
      Rng shuffle_rng = make_stream(seed, task.seed, it, StreamPurpose::shuffle);
      schedules.push_back(make_schedule(batch_size, config.ppo, shuffle_rng));
    }

    if (splitting && phase == Phase::joint && it + kMetricWindow >= config.jt_iterations) {
      GradientMatrix grads(static_cast<Eigen::Index>(n_tasks), static_cast<Eigen::Index>(layout.size()));
      for (std::size_t i = 0; i < n_tasks; ++i) {
        grads.row(static_cast<Eigen::Index>(i)) =
            task_gradient(joint, layout, batches[i], config.ppo).transpose();
      }
      metric.push(specialization_metric(grads));
    }

    UpdateStats policy_stats;
    switch (phase) {
      case Phase::joint:
        policy_stats = ppo_update(joint, layout, batches, schedules, config.ppo, adam);
        break;
      case Phase::independent:
        policy_stats.loss_per_task.resize(n_tasks);
        for (std::size_t i = 0; i < n_tasks; ++i) {
          const UpdateStats s =
              ppo_update(independent[i], layout, std::span(batches).subspan(i, 1),
                         std::span(schedules).subspan(i, 1), config.ppo, independent_adam[i]);
          policy_stats.loss_per_task[i] = s.loss_per_task[0];
        }
        break;
      case Phase::specialized:
        policy_stats = split_ppo_update(*split, *split_opt, batches, schedules, config.ppo);
        break;
    }
    const UpdateStats value_stats = value_update(vnet, batches, schedules, value_adam);

    for (std::size_t i = 0; i < n_tasks; ++i) {
      record.rows.push_back({it, i, batches[i].mean_episode_return(), batches[i].episode_returns.size(),
                             policy_stats.loss_per_task[i], value_stats.loss_per_task[i]});
    }

    if (options.observer || options.verbose) {
      for (std::size_t i = 0; i < n_tasks; ++i) {
        switch (phase) {
          case Phase::joint: task_params[i] = joint; break;
          case Phase::independent: task_params[i] = independent[i]; break;
          case Phase::specialized: task_params[i] = split->materialize(i); break;
        }
      }
    }
    if (options.verbose) {
      std::cerr << config.name << " seed " << seed << " iter " << it;
      for (std::size_t i = 0; i < n_tasks; ++i) {
        std::cerr << " | " << config.tasks[i].name << " ret " << batches[i].mean_episode_return()
                  << " ent " << gaussian_entropy(logstd_of(task_params[i], layout));
      }
      std::cerr << '\n';
    }
    if (options.observer) options.observer(it, task_params);
  }
  return record;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  ExperimentResult result;
  for (std::uint64_t seed : config.seeds) result.records.push_back(run_seed(config, seed, options));
  result.summary = aggregate_runs(result.records);
  return result;
}

double final_performance(const RunRecord& record, long task_id) {
  if (record.rows.empty()) throw std::invalid_argument("empty run record");
  const std::size_t last = record.rows.back().iteration;
  const std::size_t first = last + 1 >= kFinalWindow ? last + 1 - kFinalWindow : 0;
  // Per-iteration values first, so the task average is taken per iteration.
  std::vector<double> per_iter(last - first + 1, 0.0);
  std::vector<std::size_t> counts(per_iter.size(), 0);
  for (const auto& row : record.rows) {
    if (row.iteration < first) continue;
    if (task_id >= 0 && static_cast<long>(row.task_id) != task_id) continue;
    per_iter[row.iteration - first] += row.mean_return;
    counts[row.iteration - first] += 1;
  }
  double total = 0.0;
  for (std::size_t k = 0; k < per_iter.size(); ++k) {
    if (counts[k] == 0) throw std::invalid_argument("task missing from run record");
    total += per_iter[k] / static_cast<double>(counts[k]);
  }
  return total / static_cast<double>(per_iter.size());
}

Summary aggregate_runs(std::span<const RunRecord> records) {
  if (records.empty()) throw std::invalid_argument("aggregate_runs needs at least one record");
  const auto& ref = records.front().rows;
  if (ref.empty()) throw std::invalid_argument("empty run record");
  for (const auto& rec : records) {
    bool aligned = rec.rows.size() == ref.size();
    for (std::size_t r = 0; aligned && r < ref.size(); ++r) {
      aligned = rec.rows[r].iteration == ref[r].iteration && rec.rows[r].task_id == ref[r].task_id;
    }
    if (!aligned) throw std::invalid_argument("run records are on different iteration grids");
  }

  std::size_t n_tasks = 0;
  for (const auto& row : ref) n_tasks = std::max(n_tasks, row.task_id + 1);
  if (ref.size() % n_tasks != 0) throw std::invalid_argument("run record has missing (iteration, task) rows");

  Summary summary;
  const std::size_t seeds = records.size();
  std::vector<double> across(seeds);
  for (std::size_t base = 0; base < ref.size(); base += n_tasks) {
    const std::size_t iteration = ref[base].iteration;
    for (std::size_t i = 0; i < n_tasks; ++i) {
      for (std::size_t s = 0; s < seeds; ++s) across[s] = records[s].rows[base + i].mean_return;
      const double m = mean_of(across);
      summary.rows.push_back({iteration, m, std_of(across, m), static_cast<long>(ref[base + i].task_id)});
    }
    for (std::size_t s = 0; s < seeds; ++s) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n_tasks; ++i) sum += records[s].rows[base + i].mean_return;
      across[s] = sum / static_cast<double>(n_tasks);
    }
    const double m = mean_of(across);
    summary.rows.push_back({iteration, m, std_of(across, m), -1});
  }

  for (long task = 0; task <= static_cast<long>(n_tasks); ++task) {
    const long id = task == static_cast<long>(n_tasks) ? -1 : task;
    for (std::size_t s = 0; s < seeds; ++s) across[s] = final_performance(records[s], id);
    const double m = mean_of(across);
    summary.final.push_back({id, m, std_of(across, m)});
  }
  return summary;
}

std::vector<ExperimentConfig> make_grid(const ExperimentConfig& base) {
  std::vector<ExperimentConfig> cells;
  auto percent = [](double sp) { return std::to_string(static_cast<long>(std::lround(sp * 100.0))); };
  auto cell = [&](std::string name, Variant variant, std::size_t jt, double sp) {
    ExperimentConfig c = base;
    c.name = std::move(name);
    c.variant = variant;
    c.jt_iterations = jt;
    c.sp_fraction = sp;
    c.validate();
    cells.push_back(std::move(c));
  };
  for (std::size_t jt : base.grid.jt_values) {
    for (double sp : base.grid.sp_values) {
      cell("jt" + std::to_string(jt) + "_sp" + percent(sp), Variant::gradvar, jt, sp);
    }
  }
  cell("full_share", Variant::full_share, base.total_iterations, 0.0);
  cell("no_share", Variant::no_share, 0, 1.0);
  cell("random_jt" + std::to_string(base.grid.random_jt) + "_sp" + percent(base.grid.random_sp),
       Variant::random_split, base.grid.random_jt, base.grid.random_sp);
  cell("append_onehot", Variant::append_onehot, base.total_iterations, 0.0);
  return cells;
}

}  // namespace splitrl
