#include "splitrl/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace splitrl {

void PPOConfig::validate() const {
  if (!(clip_epsilon > 0.0)) throw std::invalid_argument("ppo.clip_epsilon must be > 0");
  if (!(discount > 0.0 && discount <= 1.0)) throw std::invalid_argument("ppo.discount must lie in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw std::invalid_argument("ppo.gae_lambda must lie in [0, 1]");
  if (epochs_per_iter == 0) throw std::invalid_argument("ppo.epochs_per_iter must be positive");
  if (minibatch_size == 0) throw std::invalid_argument("ppo.minibatch_size must be positive");
  if (batch_size < minibatch_size) throw std::invalid_argument("ppo.batch_size must be >= ppo.minibatch_size");
  if (!(policy_lr > 0.0) || !(value_lr > 0.0)) throw std::invalid_argument("learning rates must be positive");
}

Eigen::VectorXd encode_input(const Eigen::VectorXd& obs, const TaskEncoding& encoding) {
  if (encoding.count == 0) return obs;
  if (encoding.index >= encoding.count) throw std::invalid_argument("one-hot index out of range");
  Eigen::VectorXd input = Eigen::VectorXd::Zero(obs.size() + static_cast<Eigen::Index>(encoding.count));
  input.head(obs.size()) = obs;
  input[obs.size() + static_cast<Eigen::Index>(encoding.index)] = 1.0;
  return input;
}

double RolloutBatch::mean_episode_return() const {
  if (episode_returns.empty()) return partial_return;
  return std::accumulate(episode_returns.begin(), episode_returns.end(), 0.0) /
         static_cast<double>(episode_returns.size());
}

double ValueNet::predict(const Eigen::VectorXd& obs) const {
  return mlp_forward(params, layout, obs)[0];
}

RolloutBatch collect_rollouts(const TaskSpec& spec, const ParamVector& policy,
                              const ParamLayout& layout, const TaskEncoding& encoding,
                              std::size_t task_id, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw std::invalid_argument("collect_rollouts: batch_size must be positive");
  const auto n = static_cast<Eigen::Index>(batch_size);
  const auto obs_dim = static_cast<Eigen::Index>(spec.obs_dim());
  const auto act_dim = static_cast<Eigen::Index>(spec.act_dim());
  if (layout.input_dim() != spec.obs_dim() + encoding.extra_dims() ||
      layout.output_dim() != spec.act_dim()) {
    throw std::invalid_argument("policy layout does not fit task " + spec.name);
  }

  RolloutBatch batch;
  batch.task_id = task_id;
  batch.observations.resize(obs_dim, n);
  batch.policy_inputs.resize(static_cast<Eigen::Index>(layout.input_dim()), n);
  batch.next_observations.resize(obs_dim, n);
  batch.actions.resize(act_dim, n);
  batch.rewards.reserve(batch_size);
  batch.dones.reserve(batch_size);
  batch.terminals.reserve(batch_size);
  batch.old_logprobs.reserve(batch_size);

  const Eigen::VectorXd logstd = logstd_of(policy, layout);
  auto [state, obs] = env_reset(spec, rng);
  double episode_sum = 0.0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const Eigen::VectorXd input = encode_input(obs, encoding);
    const GaussianActionDistribution dist{mlp_forward(policy, layout, input), logstd};
    const Eigen::VectorXd action = sample_action(dist, rng);
    const StepResult step = env_step(spec, state, action);
    ++batch.env_steps;

    batch.observations.col(t) = obs;
    batch.policy_inputs.col(t) = input;
    batch.next_observations.col(t) = step.observation;
    batch.actions.col(t) = action;
    batch.rewards.push_back(step.reward);
    batch.old_logprobs.push_back(gaussian_logprob(dist, action));
    batch.terminals.push_back(step.terminal ? 1 : 0);
    batch.dones.push_back(step.done || t + 1 == n ? 1 : 0);

    episode_sum += step.reward;
    if (step.done) {
      batch.episode_returns.push_back(episode_sum);
      episode_sum = 0.0;
      auto reset = env_reset(spec, rng);
      state = reset.state;
      obs = std::move(reset.observation);
    } else {
      state = step.state;
      obs = step.observation;
    }
  }
  batch.partial_return = episode_sum;
  return batch;
}

void compute_values(RolloutBatch& batch, const ValueNet& vnet) {
  const std::size_t n = batch.size();
  const Eigen::MatrixXd v = mlp_forward_batch(vnet.params, vnet.layout, batch.observations).output();
  const Eigen::MatrixXd v_next =
      mlp_forward_batch(vnet.params, vnet.layout, batch.next_observations).output();
  batch.values.assign(v.data(), v.data() + n);
  batch.next_values.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    if (batch.terminals[t]) {
      batch.next_values[t] = 0.0;
    } else if (batch.dones[t]) {
      batch.next_values[t] = v_next(0, static_cast<Eigen::Index>(t));
    } else {
      batch.next_values[t] = batch.values[t + 1];
    }
  }
}

std::vector<double> gae_raw(std::span<const double> rewards, std::span<const double> values,
                            std::span<const double> next_values,
                            std::span<const std::uint8_t> dones, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || next_values.size() != n || dones.size() != n) {
    throw std::invalid_argument("gae: rewards, values, next values and dones must have equal length");
  }
  std::vector<double> adv(n, 0.0);
  double running = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double delta = rewards[t] + gamma * next_values[t] - values[t];
    running = delta + (dones[t] ? 0.0 : gamma * lambda * running);
    adv[t] = running;
  }
  return adv;
}

void normalize_advantages(std::vector<double>& advantages) {
  if (advantages.empty()) return;
  const double n = static_cast<double>(advantages.size());
  const double mean = std::accumulate(advantages.begin(), advantages.end(), 0.0) / n;
  double var = 0.0;
  for (double a : advantages) var += (a - mean) * (a - mean);
  var /= n;
  if (!(var > 0.0)) return;
  const double inv_std = 1.0 / std::sqrt(var);
  for (double& a : advantages) a = (a - mean) * inv_std;
}

void gae_advantages(RolloutBatch& batch, const ValueNet& vnet, double gamma, double lambda,
                    bool normalize) {
  compute_values(batch, vnet);
  batch.advantages =
      gae_raw(batch.rewards, batch.values, batch.next_values, batch.dones, gamma, lambda);
  batch.returns.resize(batch.size());
  for (std::size_t t = 0; t < batch.size(); ++t) {
    batch.returns[t] = batch.advantages[t] + batch.values[t];
  }
  for (double a : batch.advantages) {
    if (!std::isfinite(a)) throw std::runtime_error("non-finite advantage");
  }
  if (normalize) normalize_advantages(batch.advantages);
}

namespace {

std::vector<std::size_t> resolve_indices(std::span<const std::size_t> indices, std::size_t n) {
  std::vector<std::size_t> out;
  if (indices.empty()) {
    out.resize(n);
    std::iota(out.begin(), out.end(), std::size_t{0});
  } else {
    out.assign(indices.begin(), indices.end());
    for (std::size_t i : out) {
      if (i >= n) throw std::out_of_range("sample index outside rollout batch");
    }
  }
  return out;
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t s = 0; s < idx.size(); ++s) {
    out.col(static_cast<Eigen::Index>(s)) = m.col(static_cast<Eigen::Index>(idx[s]));
  }
  return out;
}

LossAndGrad surrogate(const ParamVector& params, const ParamLayout& layout,
                      const RolloutBatch& batch, double clip_epsilon,
                      std::span<const std::size_t> indices, bool want_grad) {
  if (batch.size() == 0) throw std::invalid_argument("PPO loss on an empty batch");
  if (batch.advantages.size() != batch.size()) {
    throw std::invalid_argument("PPO loss needs advantages; run gae_advantages first");
  }
  const std::vector<std::size_t> idx = resolve_indices(indices, batch.size());
  const auto n = static_cast<Eigen::Index>(idx.size());
  const double inv_n = 1.0 / static_cast<double>(n);

  const Eigen::MatrixXd inputs = gather(batch.policy_inputs, idx);
  const ForwardCache cache = mlp_forward_batch(params, layout, inputs);
  const Eigen::MatrixXd& mean = cache.output();
  const Eigen::VectorXd logstd = logstd_of(params, layout);
  const Eigen::ArrayXd inv_var = (-2.0 * logstd.array()).exp();

  double objective = 0.0;
  Eigen::MatrixXd mean_grad = Eigen::MatrixXd::Zero(mean.rows(), n);
  Eigen::VectorXd logstd_grad = Eigen::VectorXd::Zero(logstd.size());
  GaussianActionDistribution dist{Eigen::VectorXd(mean.rows()), logstd};
  for (Eigen::Index s = 0; s < n; ++s) {
    const std::size_t t = idx[static_cast<std::size_t>(s)];
    const auto col = static_cast<Eigen::Index>(t);
    const double adv = batch.advantages[t];
    if (!std::isfinite(adv)) throw std::runtime_error("non-finite advantage at step " + std::to_string(t));
    dist.mean = mean.col(s);
    const Eigen::VectorXd action = batch.actions.col(col);
    const double ratio = std::exp(gaussian_logprob(dist, action) - batch.old_logprobs[t]);
    if (!std::isfinite(ratio)) throw std::runtime_error("non-finite PPO ratio at step " + std::to_string(t));

    const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
    const double unclipped_term = ratio * adv;
    const double clipped_term = clipped * adv;
    objective += std::min(unclipped_term, clipped_term);

    // The min picks the clipped branch only when it is strictly smaller, and
    // the clipped branch is flat in theta outside [1-eps, 1+eps].
    if (want_grad && unclipped_term <= clipped_term) {
      const double coef = -adv * ratio * inv_n;  // d loss / d logp
      const Eigen::ArrayXd diff = (action - dist.mean).array();
      mean_grad.col(s) = (coef * diff * inv_var).matrix();
      logstd_grad.array() += coef * (diff.square() * inv_var - 1.0);
    }
  }

  LossAndGrad out;
  out.loss = -objective * inv_n;
  if (want_grad) out.grad = backprop_cached(params, layout, cache, mean_grad, &logstd_grad);
  return out;
}

}  // namespace

double ppo_loss(const ParamVector& params, const ParamLayout& layout, const RolloutBatch& batch,
                double clip_epsilon, std::span<const std::size_t> indices) {
  return surrogate(params, layout, batch, clip_epsilon, indices, false).loss;
}

LossAndGrad ppo_loss_and_grad(const ParamVector& params, const ParamLayout& layout,
                              const RolloutBatch& batch, double clip_epsilon,
                              std::span<const std::size_t> indices) {
  return surrogate(params, layout, batch, clip_epsilon, indices, true);
}

LossAndGrad value_loss_and_grad(const ValueNet& vnet, const RolloutBatch& batch,
                                std::span<const std::size_t> indices) {
  if (batch.returns.size() != batch.size() || batch.size() == 0) {
    throw std::invalid_argument("value loss needs a non-empty batch with returns");
  }
  const std::vector<std::size_t> idx = resolve_indices(indices, batch.size());
  const auto n = static_cast<Eigen::Index>(idx.size());
  const double inv_n = 1.0 / static_cast<double>(n);

  const ForwardCache cache = mlp_forward_batch(vnet.params, vnet.layout, gather(batch.observations, idx));
  Eigen::MatrixXd out_grad(1, n);
  double loss = 0.0;
  for (Eigen::Index s = 0; s < n; ++s) {
    const double err = cache.output()(0, s) - batch.returns[idx[static_cast<std::size_t>(s)]];
    loss += 0.5 * err * err;
    out_grad(0, s) = err * inv_n;
  }
  return {loss * inv_n, backprop_cached(vnet.params, vnet.layout, cache, out_grad, nullptr)};
}

std::size_t MinibatchSchedule::minibatch_count() const {
  if (epochs.empty() || minibatch_size == 0) return 0;
  return (epochs.front().size() + minibatch_size - 1) / minibatch_size;
}

std::span<const std::size_t> MinibatchSchedule::minibatch(std::size_t epoch, std::size_t k) const {
  const auto& perm = epochs.at(epoch);
  const std::size_t begin = k * minibatch_size;
  if (begin >= perm.size()) throw std::out_of_range("minibatch index out of range");
  const std::size_t end = std::min(begin + minibatch_size, perm.size());
  return std::span<const std::size_t>(perm).subspan(begin, end - begin);
}

MinibatchSchedule make_schedule(std::size_t batch_size, const PPOConfig& cfg, Rng& rng) {
  MinibatchSchedule schedule;
  schedule.minibatch_size = std::min(cfg.minibatch_size, batch_size);
  schedule.epochs.resize(cfg.epochs_per_iter);
  for (auto& perm : schedule.epochs) {
    perm.resize(batch_size);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
  }
  return schedule;
}

Eigen::VectorXd mean_rows(const Eigen::MatrixXd& rows) {
  if (rows.rows() == 0) throw std::invalid_argument("mean of zero rows");
  const Eigen::VectorXd first = rows.row(0).transpose();
  Eigen::VectorXd shift = Eigen::VectorXd::Zero(rows.cols());
  for (Eigen::Index i = 1; i < rows.rows(); ++i) shift += rows.row(i).transpose() - first;
  return first + shift / static_cast<double>(rows.rows());
}

namespace {

void check_pool(std::span<const RolloutBatch> batches, std::span<const MinibatchSchedule> schedules) {
  if (batches.empty()) throw std::invalid_argument("update needs at least one batch");
  if (batches.size() != schedules.size()) throw std::invalid_argument("one schedule per batch required");
  for (std::size_t i = 0; i < batches.size(); ++i) {
    if (schedules[i].epochs.empty() || schedules[i].epochs.front().size() != batches[i].size()) {
      throw std::invalid_argument("schedule does not match batch size");
    }
    if (schedules[i].minibatch_count() != schedules[0].minibatch_count() ||
        schedules[i].epochs.size() != schedules[0].epochs.size()) {
      throw std::invalid_argument("pooled batches need identical minibatch schedules");
    }
  }
}

}  // namespace

UpdateStats ppo_update(ParamVector& params, const ParamLayout& layout,
                       std::span<const RolloutBatch> batches,
                       std::span<const MinibatchSchedule> schedules, const PPOConfig& cfg,
                       AdamState& adam) {
  check_pool(batches, schedules);
  const std::size_t tasks = batches.size();
  const std::size_t epochs = schedules[0].epochs.size();
  const std::size_t minibatches = schedules[0].minibatch_count();

  UpdateStats stats;
  stats.loss_per_task.assign(tasks, 0.0);
  Eigen::MatrixXd grads(static_cast<Eigen::Index>(tasks), params.size());
  for (std::size_t e = 0; e < epochs; ++e) {
    for (std::size_t k = 0; k < minibatches; ++k) {
      for (std::size_t i = 0; i < tasks; ++i) {
        LossAndGrad lg = ppo_loss_and_grad(params, layout, batches[i], cfg.clip_epsilon,
                                           schedules[i].minibatch(e, k));
        grads.row(static_cast<Eigen::Index>(i)) = lg.grad.transpose();
        if (e + 1 == epochs) stats.loss_per_task[i] += lg.loss / static_cast<double>(minibatches);
      }
      adam_step(adam, params, mean_rows(grads));
    }
  }
  return stats;
}

UpdateStats value_update(ValueNet& vnet, std::span<const RolloutBatch> batches,
                         std::span<const MinibatchSchedule> schedules, AdamState& adam) {
  check_pool(batches, schedules);
  const std::size_t tasks = batches.size();
  const std::size_t epochs = schedules[0].epochs.size();
  const std::size_t minibatches = schedules[0].minibatch_count();

  UpdateStats stats;
  stats.loss_per_task.assign(tasks, 0.0);
  Eigen::MatrixXd grads(static_cast<Eigen::Index>(tasks), vnet.params.size());
  for (std::size_t e = 0; e < epochs; ++e) {
    for (std::size_t k = 0; k < minibatches; ++k) {
      for (std::size_t i = 0; i < tasks; ++i) {
        LossAndGrad lg = value_loss_and_grad(vnet, batches[i], schedules[i].minibatch(e, k));
        grads.row(static_cast<Eigen::Index>(i)) = lg.grad.transpose();
        if (e + 1 == epochs) stats.loss_per_task[i] += lg.loss / static_cast<double>(minibatches);
      }
      adam_step(adam, vnet.params, mean_rows(grads));
    }
  }
  return stats;
}

}  // namespace splitrl
