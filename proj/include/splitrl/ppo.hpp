#pragma once

// Proximal policy optimization: rollouts, GAE, the clipped surrogate and its
// gradient, value regression, and the epoch/minibatch update loop.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "splitrl/envs.hpp"
#include "splitrl/nn.hpp"
#include "splitrl/rng.hpp"

namespace splitrl {

struct PPOConfig {
  double clip_epsilon = 0.2;
  double discount = 0.99;
  double gae_lambda = 0.95;
  std::size_t epochs_per_iter = 10;
  std::size_t minibatch_size = 64;
  std::size_t batch_size = 2000;  // steps per task per iteration
  double policy_lr = 3e-4;
  double value_lr = 1e-3;

  void validate() const;
};

/// Optional one-hot task code appended to the policy input.
struct TaskEncoding {
  std::size_t index = 0;
  std::size_t count = 0;  // 0 disables the encoding

  std::size_t extra_dims() const { return count; }
};

Eigen::VectorXd encode_input(const Eigen::VectorXd& obs, const TaskEncoding& encoding);

/// One task's transitions for one iteration, episodes concatenated. Column t
/// of each matrix is time step t.
struct RolloutBatch {
  std::size_t task_id = 0;
  Eigen::MatrixXd observations;       // env observation s_t (value input)
  Eigen::MatrixXd policy_inputs;      // what the policy saw at s_t
  Eigen::MatrixXd next_observations;  // s_{t+1}, or the final state of a finished episode
  Eigen::MatrixXd actions;            // raw sampled actions (before env clipping)
  std::vector<double> rewards;
  std::vector<std::uint8_t> dones;      // episode boundary after step t (incl. batch end)
  std::vector<std::uint8_t> terminals;  // boundary by failure: no bootstrap
  std::vector<double> old_logprobs;
  std::vector<double> values;       // V(s_t)
  std::vector<double> next_values;  // V(s_{t+1}), 0 after a terminal step
  std::vector<double> advantages;
  std::vector<double> returns;
  std::vector<double> episode_returns;  // undiscounted, completed episodes only
  double partial_return = 0.0;          // reward sum of the unfinished tail episode
  std::uint64_t env_steps = 0;          // env_step calls made while collecting

  std::size_t size() const { return rewards.size(); }
  /// Mean of completed episode returns, or the partial return if none finished.
  double mean_episode_return() const;
};

struct ValueNet {
  ParamLayout layout;
  ParamVector params;

  double predict(const Eigen::VectorXd& obs) const;
};

/// Steps the task with actions sampled from the policy until exactly
/// batch_size transitions are stored. Every batch starts from a fresh reset;
/// episodes reset on termination or horizon. Values are left empty.
RolloutBatch collect_rollouts(const TaskSpec& spec, const ParamVector& policy,
                              const ParamLayout& layout, const TaskEncoding& encoding,
                              std::size_t task_id, std::size_t batch_size, Rng& rng);

/// Fills values and next_values from the value network.
void compute_values(RolloutBatch& batch, const ValueNet& vnet);

/// Un-normalized GAE advantages from per-step rewards, V(s_t), bootstrapped
/// V(s_{t+1}) (already zero after failures) and episode boundaries.
std::vector<double> gae_raw(std::span<const double> rewards, std::span<const double> values,
                            std::span<const double> next_values,
                            std::span<const std::uint8_t> dones, double gamma, double lambda);

/// Shifts advantages to zero mean and unit variance; no-op when the batch has
/// zero variance.
void normalize_advantages(std::vector<double>& advantages);

/// Computes values, advantages and returns (= raw advantage + V(s_t)), then
/// normalizes the advantages when `normalize` is set.
void gae_advantages(RolloutBatch& batch, const ValueNet& vnet, double gamma, double lambda,
                    bool normalize = true);

/// Clipped surrogate loss -mean_t min(r_t A_t, clip(r_t, 1-eps, 1+eps) A_t)
/// over the given sample indices (all samples when empty).
double ppo_loss(const ParamVector& params, const ParamLayout& layout, const RolloutBatch& batch,
                double clip_epsilon, std::span<const std::size_t> indices = {});

struct LossAndGrad {
  double loss = 0.0;
  ParamVector grad;
};

LossAndGrad ppo_loss_and_grad(const ParamVector& params, const ParamLayout& layout,
                              const RolloutBatch& batch, double clip_epsilon,
                              std::span<const std::size_t> indices = {});

/// 1/2 mean_t (V(s_t) - return_t)^2 and its gradient.
LossAndGrad value_loss_and_grad(const ValueNet& vnet, const RolloutBatch& batch,
                                std::span<const std::size_t> indices = {});

/// Per-epoch shuffles of one task batch.
struct MinibatchSchedule {
  std::size_t minibatch_size = 0;
  std::vector<std::vector<std::size_t>> epochs;  // each a permutation of [0, batch size)

  std::size_t minibatch_count() const;
  std::span<const std::size_t> minibatch(std::size_t epoch, std::size_t k) const;
};

MinibatchSchedule make_schedule(std::size_t batch_size, const PPOConfig& cfg, Rng& rng);

/// Mean of the gradient rows, computed as row0 + sum_i (row_i - row0) / N so
/// identical rows reproduce row0 bitwise.
Eigen::VectorXd mean_rows(const Eigen::MatrixXd& rows);

struct UpdateStats {
  std::vector<double> loss_per_task;  // mean minibatch loss over the last epoch
};

/// Pooled PPO update. Every step takes the k-th minibatch of each task's
/// schedule, evaluates the per-task gradients and applies their mean with
/// one Adam step. With a single batch this is ordinary PPO.
UpdateStats ppo_update(ParamVector& params, const ParamLayout& layout,
                       std::span<const RolloutBatch> batches,
                       std::span<const MinibatchSchedule> schedules, const PPOConfig& cfg,
                       AdamState& adam);

/// Value regression on the same minibatch schedule as the policy.
UpdateStats value_update(ValueNet& vnet, std::span<const RolloutBatch> batches,
                         std::span<const MinibatchSchedule> schedules, AdamState& adam);

}  // namespace splitrl
