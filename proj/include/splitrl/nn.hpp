#pragma once

// Feed-forward tanh networks over a flat parameter vector, the diagonal
// Gaussian policy head, exact reverse-mode gradients and Adam.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "splitrl/rng.hpp"

namespace splitrl {

/// Flat parameter storage. Weights of layer l are stored row-major
/// (out_l x in_l), followed by the layer's bias, then the next layer.
/// Policy layouts end with one log-std slot per action dimension.
using ParamVector = Eigen::VectorXd;

class ParamLayout {
 public:
  struct Layer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
  };

  enum class SlotKind { weight, bias, logstd };

  struct Slot {
    SlotKind kind;
    std::size_t layer;  // unused for logstd
    std::size_t row;    // output unit, or action dimension for logstd
    std::size_t col;    // input unit; 0 for bias and logstd
  };

  ParamLayout(std::size_t input_dim, std::vector<std::size_t> hidden,
              std::size_t output_dim, bool includes_logstd);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return output_dim_; }
  const std::vector<std::size_t>& hidden() const { return hidden_; }
  bool includes_logstd() const { return includes_logstd_; }

  /// |theta|
  std::size_t size() const { return size_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t logstd_offset() const { return logstd_offset_; }

  /// Maps a flat index back to the parameter it stores.
  Slot locate(std::size_t flat_index) const;

  bool operator==(const ParamLayout& other) const {
    return input_dim_ == other.input_dim_ && hidden_ == other.hidden_ &&
           output_dim_ == other.output_dim_ &&
           includes_logstd_ == other.includes_logstd_;
  }

 private:
  std::size_t input_dim_;
  std::vector<std::size_t> hidden_;
  std::size_t output_dim_;
  bool includes_logstd_;
  std::vector<Layer> layers_;
  std::size_t logstd_offset_ = 0;
  std::size_t size_ = 0;
};

/// Weights and biases uniform in +-1/sqrt(fan_in), log-std zero.
ParamVector init_params(const ParamLayout& layout, Rng& rng);

/// Network output for one observation: tanh hidden layers, linear output.
Eigen::VectorXd mlp_forward(const ParamVector& params, const ParamLayout& layout,
                            const Eigen::VectorXd& obs);

/// Activations of every layer for a batch, kept for the backward pass.
/// activations[0] is the input, activations.back() the linear output.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> activations;
  const Eigen::MatrixXd& output() const { return activations.back(); }
};

/// Batched forward pass; obs is input_dim x batch, one column per sample.
ForwardCache mlp_forward_batch(const ParamVector& params, const ParamLayout& layout,
                               const Eigen::MatrixXd& obs);

/// Gradient of sum_samples <output_grad[:, s], output(obs[:, s])> with respect
/// to every network parameter. Log-std slots receive logstd_grad when given
/// and zero otherwise.
ParamVector backprop(const ParamVector& params, const ParamLayout& layout,
                     const Eigen::MatrixXd& obs, const Eigen::MatrixXd& output_grad);
ParamVector backprop(const ParamVector& params, const ParamLayout& layout,
                     const Eigen::MatrixXd& obs, const Eigen::MatrixXd& output_grad,
                     const Eigen::VectorXd& logstd_grad);

/// Same as backprop, reusing a forward pass already computed on obs.
ParamVector backprop_cached(const ParamVector& params, const ParamLayout& layout,
                            const ForwardCache& cache, const Eigen::MatrixXd& output_grad,
                            const Eigen::VectorXd* logstd_grad);

struct GaussianActionDistribution {
  Eigen::VectorXd mean;
  Eigen::VectorXd logstd;
};

/// Log density of a diagonal Gaussian.
double gaussian_logprob(const GaussianActionDistribution& dist,
                        const Eigen::VectorXd& action);

/// mean + exp(logstd) * z, z standard normal from rng.
Eigen::VectorXd sample_action(const GaussianActionDistribution& dist, Rng& rng);

/// Differential entropy of the diagonal Gaussian.
double gaussian_entropy(const Eigen::VectorXd& logstd);

/// The log-std slice of a policy parameter vector.
Eigen::VectorXd logstd_of(const ParamVector& params, const ParamLayout& layout);

/// Policy distribution at one observation.
GaussianActionDistribution policy_distribution(const ParamVector& params,
                                               const ParamLayout& layout,
                                               const Eigen::VectorXd& obs);

/// Gradient of log pi(action | obs) with respect to every policy parameter.
ParamVector policy_logprob_grad(const ParamVector& params, const ParamLayout& layout,
                                const Eigen::VectorXd& obs, const Eigen::VectorXd& action);

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  std::int64_t step_count = 0;
  AdamConfig config;

  static AdamState zeros(std::size_t size, AdamConfig config = {});
};

/// One bias-corrected Adam step in place. Rejects non-finite gradients
/// before touching either argument.
void adam_step(AdamState& state, ParamVector& params, const Eigen::VectorXd& grad);

namespace detail {

/// Bias-correction factors for the step about to be taken.
struct AdamCorrection {
  double step_size;  // lr / (1 - beta1^t)
  double second;     // 1 - beta2^t
};

AdamCorrection adam_correction(const AdamConfig& config, std::int64_t step);

/// Per-coordinate update shared by every optimizer path so that the same
/// inputs give bitwise-identical results wherever they are applied.
inline void adam_coordinate(const AdamConfig& config, const AdamCorrection& corr,
                            double& m, double& v, double& param, double g) {
  m = config.beta1 * m + (1.0 - config.beta1) * g;
  v = config.beta2 * v + (1.0 - config.beta2) * (g * g);
  const double v_hat = v / corr.second;
  param -= corr.step_size * m / (std::sqrt(v_hat) + config.epsilon);
}

void require_finite(const Eigen::Ref<const Eigen::VectorXd>& values, const char* what);

}  // namespace detail

}  // namespace splitrl
