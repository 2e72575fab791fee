#pragma once

// Gradient-guided weight splitting.
//
// After joint training, each task's PPO gradient is evaluated on its own
// rollouts. The per-weight population variance across tasks, averaged over a
// window of iterations, measures how much the tasks disagree about that
// weight. The M lowest-variance weights stay shared (one value, updated with
// the mean task gradient); every other weight is copied once per task and
// trained only on that task's gradient.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "splitrl/nn.hpp"
#include "splitrl/ppo.hpp"
#include "splitrl/rng.hpp"

namespace splitrl {

/// One row per task, one column per policy parameter.
using GradientMatrix = Eigen::MatrixXd;
using VarianceVector = Eigen::VectorXd;

class ShareMask {
 public:
  ShareMask() = default;
  explicit ShareMask(std::vector<std::uint8_t> shared);

  static ShareMask all_shared(std::size_t size);
  static ShareMask none_shared(std::size_t size);

  std::size_t size() const { return shared_.size(); }
  std::size_t shared_count() const { return shared_count_; }
  bool is_shared(std::size_t index) const { return shared_.at(index) != 0; }
  const std::vector<std::uint8_t>& flags() const { return shared_; }

  bool operator==(const ShareMask& other) const { return shared_ == other.shared_; }

 private:
  std::vector<std::uint8_t> shared_;
  std::size_t shared_count_ = 0;
};

/// g_i = dL_PPO/dtheta on task i's full batch, evaluated once.
Eigen::VectorXd task_gradient(const ParamVector& params, const ParamLayout& layout,
                              const RolloutBatch& rollouts, const PPOConfig& cfg);

/// Element-wise population variance across the task rows.
VarianceVector specialization_metric(const GradientMatrix& grads);

/// Fixed-capacity window of metric vectors and their element-wise mean.
class MetricAccumulator {
 public:
  static constexpr std::size_t kDefaultWindow = 10;

  explicit MetricAccumulator(std::size_t capacity = kDefaultWindow);

  void push(const VarianceVector& v);
  std::size_t capacity() const { return capacity_; }
  std::size_t count() const { return window_.size(); }
  bool full() const { return window_.size() == capacity_; }
  /// Mean of the window. Throws until the window is full.
  const VarianceVector& averaged() const;

 private:
  std::size_t capacity_;
  std::vector<VarianceVector> window_;
  VarianceVector averaged_;
};

/// Shares exactly the M indices with smallest variance; ties go to the lower
/// flat index.
ShareMask select_shared_mask(const VarianceVector& v, std::size_t shared_count);

/// Shares round(shared_fraction * size) indices chosen uniformly at random.
ShareMask random_mask(std::size_t size, double shared_fraction, Rng& rng);

/// M = round((1 - sp) * size) for a specialized fraction sp.
std::size_t shared_count_for(double specialized_fraction, std::size_t size);

struct SplitOptimizer;

/// N subnetworks over one parameter layout. Shared indices live once in
/// shared storage; every other index has one copy per task.
class SplitPolicy {
 public:
  /// Every task starts as an exact copy of joint_params.
  SplitPolicy(ParamLayout layout, ShareMask mask, const ParamVector& joint_params,
              std::size_t task_count);

  const ParamLayout& layout() const { return layout_; }
  const ShareMask& mask() const { return mask_; }
  std::size_t task_count() const { return specialized_.size(); }

  /// Task `task`'s full parameter vector.
  ParamVector materialize(std::size_t task) const;

  /// Writes one coordinate as seen by `task`: the shared value when the index
  /// is shared, otherwise that task's private copy.
  void set_parameter(std::size_t task, std::size_t index, double value);

  const ParamVector& shared_storage() const { return shared_; }
  const ParamVector& specialized_storage(std::size_t task) const { return specialized_.at(task); }

 private:
  friend void split_update(SplitPolicy&, SplitOptimizer&, const GradientMatrix&);

  void check_task(std::size_t task) const;

  ParamLayout layout_;
  ShareMask mask_;
  ParamVector shared_;                    // meaningful at shared indices
  std::vector<ParamVector> specialized_;  // meaningful at non-shared indices
};

/// Distribution of task `task`'s subnetwork at obs.
GaussianActionDistribution split_forward(const SplitPolicy& policy, std::size_t task,
                                         const Eigen::VectorXd& obs);

/// One Adam state for the shared storage and one per task for the private
/// copies. Built from the joint optimizer so moments carry across the split.
struct SplitOptimizer {
  AdamState shared;
  std::vector<AdamState> per_task;

  static SplitOptimizer from_joint(const AdamState& joint, std::size_t task_count);
};

/// Shared coordinates step on the mean task gradient; task i's private
/// coordinates step on g_i. Validates every row before changing anything.
void split_update(SplitPolicy& policy, SplitOptimizer& optimizer, const GradientMatrix& grads);

/// Specialization-phase PPO update: per-task minibatch gradients on each
/// task's materialized parameters, combined by split_update.
UpdateStats split_ppo_update(SplitPolicy& policy, SplitOptimizer& optimizer,
                             std::span<const RolloutBatch> batches,
                             std::span<const MinibatchSchedule> schedules, const PPOConfig& cfg);

/// Text artifact: one line per parameter, "index variance shared(0/1)".
void write_mask_artifact(std::ostream& out, const ShareMask& mask, const VarianceVector& variance);

struct MaskArtifact {
  ShareMask mask;
  VarianceVector variance;
};

MaskArtifact read_mask_artifact(std::istream& in);

}  // namespace splitrl
