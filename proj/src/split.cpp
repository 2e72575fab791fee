#include "splitrl/split.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "splitrl/numfmt.hpp"

namespace splitrl {

ShareMask::ShareMask(std::vector<std::uint8_t> shared) : shared_(std::move(shared)) {
  for (auto& flag : shared_) {
    flag = flag != 0 ? 1 : 0;
    shared_count_ += flag;
  }
}

ShareMask ShareMask::all_shared(std::size_t size) {
  return ShareMask(std::vector<std::uint8_t>(size, 1));
}

ShareMask ShareMask::none_shared(std::size_t size) {
  return ShareMask(std::vector<std::uint8_t>(size, 0));
}

Eigen::VectorXd task_gradient(const ParamVector& params, const ParamLayout& layout,
                              const RolloutBatch& rollouts, const PPOConfig& cfg) {
  if (rollouts.size() == 0) throw std::invalid_argument("task_gradient on an empty batch");
  return ppo_loss_and_grad(params, layout, rollouts, cfg.clip_epsilon).grad;
}

VarianceVector specialization_metric(const GradientMatrix& grads) {
  const Eigen::Index n = grads.rows();
  if (n < 2) throw std::invalid_argument("specialization metric needs at least two tasks");
  if (!grads.allFinite()) throw std::invalid_argument("non-finite entry in gradient matrix");
  const Eigen::VectorXd mean = mean_rows(grads);
  VarianceVector v = VarianceVector::Zero(grads.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    v += (grads.row(i).transpose() - mean).array().square().matrix();
  }
  return v / static_cast<double>(n);
}

MetricAccumulator::MetricAccumulator(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw std::invalid_argument("metric window capacity must be positive");
}

void MetricAccumulator::push(const VarianceVector& v) {
  if (full()) throw std::logic_error("metric window already holds " + std::to_string(capacity_) + " vectors");
  if (!window_.empty() && v.size() != window_.front().size()) {
    throw std::invalid_argument("metric vector length differs from the window");
  }
  window_.push_back(v);
  if (full()) {
    averaged_ = VarianceVector::Zero(v.size());
    for (const auto& w : window_) averaged_ += w;
    averaged_ /= static_cast<double>(capacity_);
  }
}

const VarianceVector& MetricAccumulator::averaged() const {
  if (!full()) {
    throw std::logic_error("metric window has " + std::to_string(window_.size()) + " of " +
                           std::to_string(capacity_) + " vectors");
  }
  return averaged_;
}

ShareMask select_shared_mask(const VarianceVector& v, std::size_t shared_count) {
  const auto size = static_cast<std::size_t>(v.size());
  if (shared_count > size) {
    throw std::invalid_argument("cannot share " + std::to_string(shared_count) + " of " +
                                std::to_string(size) + " parameters");
  }
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    if (!std::isfinite(v[j]) || v[j] < 0.0) throw std::invalid_argument("variance entries must be finite and >= 0");
  }
  std::vector<std::size_t> order(size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto less = [&](std::size_t a, std::size_t b) {
    const double va = v[static_cast<Eigen::Index>(a)];
    const double vb = v[static_cast<Eigen::Index>(b)];
    return va < vb || (va == vb && a < b);
  };
  if (shared_count < size) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(shared_count),
                     order.end(), less);
  }
  std::vector<std::uint8_t> flags(size, 0);
  for (std::size_t r = 0; r < shared_count; ++r) flags[order[r]] = 1;
  return ShareMask(std::move(flags));
}

ShareMask random_mask(std::size_t size, double shared_fraction, Rng& rng) {
  if (!(shared_fraction >= 0.0 && shared_fraction <= 1.0)) {
    throw std::invalid_argument("shared fraction must lie in [0, 1]");
  }
  const auto count = static_cast<std::size_t>(std::llround(shared_fraction * static_cast<double>(size)));
  std::vector<std::size_t> order(size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::uint8_t> flags(size, 0);
  for (std::size_t r = 0; r < count; ++r) flags[order[r]] = 1;
  return ShareMask(std::move(flags));
}

std::size_t shared_count_for(double specialized_fraction, std::size_t size) {
  if (!(specialized_fraction >= 0.0 && specialized_fraction <= 1.0)) {
    throw std::invalid_argument("specialized fraction must lie in [0, 1]");
  }
  return static_cast<std::size_t>(
      std::llround((1.0 - specialized_fraction) * static_cast<double>(size)));
}

SplitPolicy::SplitPolicy(ParamLayout layout, ShareMask mask, const ParamVector& joint_params,
                         std::size_t task_count)
    : layout_(std::move(layout)), mask_(std::move(mask)), shared_(joint_params) {
  if (task_count < 1) throw std::invalid_argument("split policy needs at least one task");
  if (mask_.size() != layout_.size() || static_cast<std::size_t>(joint_params.size()) != layout_.size()) {
    throw std::invalid_argument("mask and parameters must match the layout size");
  }
  specialized_.assign(task_count, joint_params);
}

void SplitPolicy::check_task(std::size_t task) const {
  if (task >= specialized_.size()) {
    throw std::out_of_range("task id " + std::to_string(task) + " outside split policy with " +
                            std::to_string(specialized_.size()) + " tasks");
  }
}

ParamVector SplitPolicy::materialize(std::size_t task) const {
  check_task(task);
  ParamVector out = specialized_[task];
  const auto& flags = mask_.flags();
  for (std::size_t j = 0; j < flags.size(); ++j) {
    if (flags[j]) out[static_cast<Eigen::Index>(j)] = shared_[static_cast<Eigen::Index>(j)];
  }
  return out;
}

void SplitPolicy::set_parameter(std::size_t task, std::size_t index, double value) {
  check_task(task);
  if (index >= mask_.size()) throw std::out_of_range("parameter index outside layout");
  if (mask_.is_shared(index)) {
    shared_[static_cast<Eigen::Index>(index)] = value;
  } else {
    specialized_[task][static_cast<Eigen::Index>(index)] = value;
  }
}

GaussianActionDistribution split_forward(const SplitPolicy& policy, std::size_t task,
                                         const Eigen::VectorXd& obs) {
  return policy_distribution(policy.materialize(task), policy.layout(), obs);
}

SplitOptimizer SplitOptimizer::from_joint(const AdamState& joint, std::size_t task_count) {
  return {joint, std::vector<AdamState>(task_count, joint)};
}

void split_update(SplitPolicy& policy, SplitOptimizer& optimizer, const GradientMatrix& grads) {
  const std::size_t tasks = policy.task_count();
  const auto size = static_cast<Eigen::Index>(policy.layout().size());
  if (static_cast<std::size_t>(grads.rows()) != tasks || grads.cols() != size) {
    throw std::invalid_argument("split_update expects one full-layout gradient row per task");
  }
  if (optimizer.per_task.size() != tasks || optimizer.shared.first_moment.size() != size) {
    throw std::invalid_argument("split optimizer does not match the split policy");
  }
  for (Eigen::Index i = 0; i < grads.rows(); ++i) {
    detail::require_finite(grads.row(i).transpose(), "task gradient");
  }

  const auto& flags = policy.mask().flags();
  const std::size_t shared_count = policy.mask().shared_count();

  if (shared_count > 0) {
    const Eigen::VectorXd mean = mean_rows(grads);
    AdamState& st = optimizer.shared;
    st.step_count += 1;
    const auto corr = detail::adam_correction(st.config, st.step_count);
    for (Eigen::Index j = 0; j < size; ++j) {
      if (!flags[static_cast<std::size_t>(j)]) continue;
      detail::adam_coordinate(st.config, corr, st.first_moment[j], st.second_moment[j],
                              policy.shared_[j], mean[j]);
    }
  }
  if (shared_count < flags.size()) {
    for (std::size_t i = 0; i < tasks; ++i) {
      AdamState& st = optimizer.per_task[i];
      ParamVector& own = policy.specialized_[i];
      st.step_count += 1;
      const auto corr = detail::adam_correction(st.config, st.step_count);
      const auto row = static_cast<Eigen::Index>(i);
      for (Eigen::Index j = 0; j < size; ++j) {
        if (flags[static_cast<std::size_t>(j)]) continue;
        detail::adam_coordinate(st.config, corr, st.first_moment[j], st.second_moment[j], own[j],
                                grads(row, j));
      }
    }
  }
}

UpdateStats split_ppo_update(SplitPolicy& policy, SplitOptimizer& optimizer,
                             std::span<const RolloutBatch> batches,
                             std::span<const MinibatchSchedule> schedules, const PPOConfig& cfg) {
  const std::size_t tasks = policy.task_count();
  if (batches.size() != tasks || schedules.size() != tasks) {
    throw std::invalid_argument("split update needs one batch and schedule per task");
  }
  const std::size_t epochs = schedules[0].epochs.size();
  const std::size_t minibatches = schedules[0].minibatch_count();
  for (const auto& s : schedules) {
    if (s.epochs.size() != epochs || s.minibatch_count() != minibatches) {
      throw std::invalid_argument("split update needs identical minibatch schedules");
    }
  }

  UpdateStats stats;
  stats.loss_per_task.assign(tasks, 0.0);
  GradientMatrix grads(static_cast<Eigen::Index>(tasks),
                       static_cast<Eigen::Index>(policy.layout().size()));
  for (std::size_t e = 0; e < epochs; ++e) {
    for (std::size_t k = 0; k < minibatches; ++k) {
      for (std::size_t i = 0; i < tasks; ++i) {
        const ParamVector params = policy.materialize(i);
        LossAndGrad lg = ppo_loss_and_grad(params, policy.layout(), batches[i], cfg.clip_epsilon,
                                           schedules[i].minibatch(e, k));
        grads.row(static_cast<Eigen::Index>(i)) = lg.grad.transpose();
        if (e + 1 == epochs) stats.loss_per_task[i] += lg.loss / static_cast<double>(minibatches);
      }
      split_update(policy, optimizer, grads);
    }
  }
  return stats;
}

void write_mask_artifact(std::ostream& out, const ShareMask& mask, const VarianceVector& variance) {
  if (static_cast<std::size_t>(variance.size()) != mask.size()) {
    throw std::invalid_argument("mask and variance lengths differ");
  }
  for (std::size_t j = 0; j < mask.size(); ++j) {
    out << j << ' ' << format_number(variance[static_cast<Eigen::Index>(j)]) << ' '
        << (mask.is_shared(j) ? 1 : 0) << '\n';
  }
}

MaskArtifact read_mask_artifact(std::istream& in) {
  std::vector<std::uint8_t> flags;
  std::vector<double> values;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::size_t index = 0;
    double variance = 0.0;
    int shared = 0;
    if (!(fields >> index >> variance >> shared) || index != flags.size() || (shared != 0 && shared != 1)) {
      throw std::runtime_error("malformed mask artifact line " + std::to_string(flags.size() + 1) +
                               ": '" + line + "'");
    }
    flags.push_back(static_cast<std::uint8_t>(shared));
    values.push_back(variance);
  }
  MaskArtifact artifact{ShareMask(std::move(flags)),
                        Eigen::Map<VarianceVector>(values.data(), static_cast<Eigen::Index>(values.size()))};
  return artifact;
}

}  // namespace splitrl
