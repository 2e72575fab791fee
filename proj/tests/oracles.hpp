#pragma once

// Reference computations used only by tests. Each one is written directly
// from the defining formula with plain loops and no shared code paths with
// the library beyond the parameter layout.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "splitrl/nn.hpp"
#include "splitrl/ppo.hpp"

namespace oracle {

/// Straight-line MLP evaluation with scalar triple loops.
inline std::vector<double> mlp(const splitrl::ParamVector& p, const splitrl::ParamLayout& layout,
                               const std::vector<double>& x) {
  std::vector<double> a = x;
  const auto& layers = layout.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    std::vector<double> z(L.out, 0.0);
    for (std::size_t r = 0; r < L.out; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < L.in; ++c) acc += p[static_cast<Eigen::Index>(L.weight_offset + r * L.in + c)] * a[c];
      acc += p[static_cast<Eigen::Index>(L.bias_offset + r)];
      z[r] = (l + 1 < layers.size()) ? std::tanh(acc) : acc;
    }
    a = std::move(z);
  }
  return a;
}

/// Central finite-difference gradient of f at x.
inline Eigen::VectorXd finite_diff(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = xp[i];
    xp[i] = orig + h;
    const double fp = f(xp);
    xp[i] = orig - h;
    const double fm = f(xp);
    xp[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Max over coordinates of |a - b| / max(|a|, |b|, floor). The floor keeps
/// coordinates whose true gradient is ~0 from dividing round-off by round-off.
inline double max_rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

/// GAE by explicit double sum within each episode:
/// A_t = sum_{l >= 0, t+l in episode} (gamma lambda)^l delta_{t+l}.
inline std::vector<double> gae_bruteforce(const std::vector<double>& r, const std::vector<double>& v,
                                          const std::vector<double>& v_next,
                                          const std::vector<std::uint8_t>& done, double gamma, double lambda) {
  const std::size_t n = r.size();
  std::vector<double> adv(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double acc = 0.0;
    double w = 1.0;
    for (std::size_t k = t; k < n; ++k) {
      acc += w * (r[k] + gamma * v_next[k] - v[k]);
      if (done[k]) break;
      w *= gamma * lambda;
    }
    adv[t] = acc;
  }
  return adv;
}

/// Two-pass population variance of each column.
inline Eigen::VectorXd column_variance(const Eigen::MatrixXd& g) {
  Eigen::VectorXd out(g.cols());
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    double mean = 0.0;
    for (Eigen::Index i = 0; i < g.rows(); ++i) mean += g(i, j);
    mean /= static_cast<double>(g.rows());
    double ss = 0.0;
    for (Eigen::Index i = 0; i < g.rows(); ++i) ss += (g(i, j) - mean) * (g(i, j) - mean);
    out[j] = ss / static_cast<double>(g.rows());
  }
  return out;
}

/// Synthetic rollout batch over a given policy: random inputs and actions,
/// log-probs of the given behaviour parameters, random advantages.
inline splitrl::RolloutBatch random_batch(const splitrl::ParamVector& behaviour, const splitrl::ParamLayout& layout,
                                          std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  splitrl::RolloutBatch b;
  const auto in = static_cast<Eigen::Index>(layout.input_dim());
  const auto out = static_cast<Eigen::Index>(layout.output_dim());
  b.observations.resize(in, static_cast<Eigen::Index>(n));
  b.policy_inputs.resize(in, static_cast<Eigen::Index>(n));
  b.next_observations.resize(in, static_cast<Eigen::Index>(n));
  b.actions.resize(out, static_cast<Eigen::Index>(n));
  for (std::size_t t = 0; t < n; ++t) {
    const auto c = static_cast<Eigen::Index>(t);
    for (Eigen::Index k = 0; k < in; ++k) {
      b.observations(k, c) = normal(rng);
      b.next_observations(k, c) = normal(rng);
    }
    b.policy_inputs.col(c) = b.observations.col(c);
    const auto dist = splitrl::policy_distribution(behaviour, layout, b.observations.col(c));
    for (Eigen::Index k = 0; k < out; ++k) b.actions(k, c) = dist.mean[k] + std::exp(dist.logstd[k]) * normal(rng);
    b.old_logprobs.push_back(splitrl::gaussian_logprob(dist, b.actions.col(c)));
    b.rewards.push_back(normal(rng));
    b.dones.push_back(0);
    b.terminals.push_back(0);
    b.advantages.push_back(normal(rng));
    b.returns.push_back(normal(rng));
  }
  b.dones.back() = 1;
  return b;
}

}  // namespace oracle
