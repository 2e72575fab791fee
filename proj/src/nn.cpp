#include "splitrl/nn.hpp"

#include <numbers>
#include <stdexcept>
#include <string>

namespace splitrl {

namespace {

using RowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using RowMajorMapMut =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)

void check_params(const ParamVector& params, const ParamLayout& layout) {
  if (static_cast<std::size_t>(params.size()) != layout.size()) {
    throw std::invalid_argument("parameter vector has " + std::to_string(params.size()) +
                                " entries, layout expects " + std::to_string(layout.size()));
  }
}

void check_input_rows(Eigen::Index rows, const ParamLayout& layout) {
  if (static_cast<std::size_t>(rows) != layout.input_dim()) {
    throw std::invalid_argument("observation has dimension " + std::to_string(rows) +
                                ", network expects " + std::to_string(layout.input_dim()));
  }
}

}  // namespace

ParamLayout::ParamLayout(std::size_t input_dim, std::vector<std::size_t> hidden,
                         std::size_t output_dim, bool includes_logstd)
    : input_dim_(input_dim),
      hidden_(std::move(hidden)),
      output_dim_(output_dim),
      includes_logstd_(includes_logstd) {
  if (input_dim_ == 0 || output_dim_ == 0) {
    throw std::invalid_argument("network input and output dimensions must be positive");
  }
  std::size_t offset = 0;
  std::size_t in = input_dim_;
  auto add_layer = [&](std::size_t out) {
    if (out == 0) throw std::invalid_argument("hidden layer widths must be positive");
    Layer layer{in, out, offset, offset + in * out};
    offset = layer.bias_offset + out;
    layers_.push_back(layer);
    in = out;
  };
  for (std::size_t width : hidden_) add_layer(width);
  add_layer(output_dim_);
  logstd_offset_ = offset;
  size_ = offset + (includes_logstd_ ? output_dim_ : 0);
}

ParamLayout::Slot ParamLayout::locate(std::size_t flat_index) const {
  if (flat_index >= size_) {
    throw std::out_of_range("flat index " + std::to_string(flat_index) + " outside layout of size " +
                            std::to_string(size_));
  }
  if (flat_index >= logstd_offset_) {
    return {SlotKind::logstd, layers_.size(), flat_index - logstd_offset_, 0};
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    if (flat_index < layer.bias_offset) {
      const std::size_t local = flat_index - layer.weight_offset;
      return {SlotKind::weight, l, local / layer.in, local % layer.in};
    }
    if (flat_index < layer.bias_offset + layer.out) {
      return {SlotKind::bias, l, flat_index - layer.bias_offset, 0};
    }
  }
  throw std::logic_error("unreachable: layout offsets inconsistent");
}

ParamVector init_params(const ParamLayout& layout, Rng& rng) {
  ParamVector params = ParamVector::Zero(static_cast<Eigen::Index>(layout.size()));
  for (const auto& layer : layout.layers()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const std::size_t end = layer.bias_offset + layer.out;
    for (std::size_t i = layer.weight_offset; i < end; ++i) {
      params[static_cast<Eigen::Index>(i)] = dist(rng);
    }
  }
  return params;
}

namespace {

// tanh through the vectorized exp; absolute error stays below 4e-16.
template <typename A>
auto hidden_activation(const A& z) {
  return 1.0 - 2.0 / ((2.0 * z).exp() + 1.0);
}

}  // namespace

ForwardCache mlp_forward_batch(const ParamVector& params, const ParamLayout& layout,
                               const Eigen::MatrixXd& obs) {
  check_params(params, layout);
  check_input_rows(obs.rows(), layout);
  if (!obs.allFinite()) throw std::invalid_argument("non-finite network input");

  ForwardCache cache;
  const auto& layers = layout.layers();
  cache.activations.reserve(layers.size() + 1);
  cache.activations.push_back(obs);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    RowMajorMap w(params.data() + layer.weight_offset, static_cast<Eigen::Index>(layer.out),
                  static_cast<Eigen::Index>(layer.in));
    Eigen::Map<const Eigen::VectorXd> b(params.data() + layer.bias_offset,
                                        static_cast<Eigen::Index>(layer.out));
    Eigen::MatrixXd z = w * cache.activations.back();
    z.colwise() += b;
    if (l + 1 < layers.size()) z = hidden_activation(z.array()).matrix();
    cache.activations.push_back(std::move(z));
  }
  return cache;
}

Eigen::VectorXd mlp_forward(const ParamVector& params, const ParamLayout& layout,
                            const Eigen::VectorXd& obs) {
  check_params(params, layout);
  check_input_rows(obs.size(), layout);
  if (!obs.allFinite()) throw std::invalid_argument("non-finite network input");

  Eigen::VectorXd a = obs;
  const auto& layers = layout.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    RowMajorMap w(params.data() + layer.weight_offset, static_cast<Eigen::Index>(layer.out),
                  static_cast<Eigen::Index>(layer.in));
    Eigen::Map<const Eigen::VectorXd> b(params.data() + layer.bias_offset,
                                        static_cast<Eigen::Index>(layer.out));
    Eigen::VectorXd z = w * a + b;
    a = (l + 1 < layers.size()) ? Eigen::VectorXd(hidden_activation(z.array())) : z;
  }
  return a;
}

ParamVector backprop_cached(const ParamVector& params, const ParamLayout& layout,
                            const ForwardCache& cache, const Eigen::MatrixXd& output_grad,
                            const Eigen::VectorXd* logstd_grad) {
  check_params(params, layout);
  const auto& layers = layout.layers();
  if (cache.activations.size() != layers.size() + 1) {
    throw std::invalid_argument("forward cache does not match layout depth");
  }
  const Eigen::Index batch = cache.activations.front().cols();
  if (output_grad.rows() != static_cast<Eigen::Index>(layout.output_dim()) ||
      output_grad.cols() != batch) {
    throw std::invalid_argument("output gradient is " + std::to_string(output_grad.rows()) + "x" +
                                std::to_string(output_grad.cols()) + ", expected " +
                                std::to_string(layout.output_dim()) + "x" + std::to_string(batch));
  }

  ParamVector grad = ParamVector::Zero(static_cast<Eigen::Index>(layout.size()));
  Eigen::MatrixXd delta = output_grad;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& layer = layers[l];
    const Eigen::MatrixXd& input = cache.activations[l];
    RowMajorMapMut gw(grad.data() + layer.weight_offset, static_cast<Eigen::Index>(layer.out),
                      static_cast<Eigen::Index>(layer.in));
    gw.noalias() = delta * input.transpose();
    grad.segment(static_cast<Eigen::Index>(layer.bias_offset), static_cast<Eigen::Index>(layer.out)) =
        delta.rowwise().sum();
    if (l > 0) {
      RowMajorMap w(params.data() + layer.weight_offset, static_cast<Eigen::Index>(layer.out),
                    static_cast<Eigen::Index>(layer.in));
      Eigen::MatrixXd back = w.transpose() * delta;
      delta = back.array() * (1.0 - input.array().square());
    }
  }

  if (logstd_grad != nullptr) {
    if (!layout.includes_logstd()) {
      throw std::invalid_argument("log-std gradient given for a layout without log-std");
    }
    if (static_cast<std::size_t>(logstd_grad->size()) != layout.output_dim()) {
      throw std::invalid_argument("log-std gradient length does not match action dimension");
    }
    grad.segment(static_cast<Eigen::Index>(layout.logstd_offset()),
                 static_cast<Eigen::Index>(layout.output_dim())) = *logstd_grad;
  }
  return grad;
}

ParamVector backprop(const ParamVector& params, const ParamLayout& layout,
                     const Eigen::MatrixXd& obs, const Eigen::MatrixXd& output_grad) {
  if (obs.cols() != output_grad.cols()) {
    throw std::invalid_argument("observation and output-gradient batch sizes differ");
  }
  const ForwardCache cache = mlp_forward_batch(params, layout, obs);
  return backprop_cached(params, layout, cache, output_grad, nullptr);
}

ParamVector backprop(const ParamVector& params, const ParamLayout& layout,
                     const Eigen::MatrixXd& obs, const Eigen::MatrixXd& output_grad,
                     const Eigen::VectorXd& logstd_grad) {
  if (obs.cols() != output_grad.cols()) {
    throw std::invalid_argument("observation and output-gradient batch sizes differ");
  }
  const ForwardCache cache = mlp_forward_batch(params, layout, obs);
  return backprop_cached(params, layout, cache, output_grad, &logstd_grad);
}

double gaussian_logprob(const GaussianActionDistribution& dist, const Eigen::VectorXd& action) {
  if (action.size() != dist.mean.size() || dist.logstd.size() != dist.mean.size()) {
    throw std::invalid_argument("action, mean and log-std lengths must agree");
  }
  double logp = 0.0;
  for (Eigen::Index j = 0; j < action.size(); ++j) {
    const double z = (action[j] - dist.mean[j]) / std::exp(dist.logstd[j]);
    logp -= dist.logstd[j] + kHalfLog2Pi + 0.5 * z * z;
  }
  return logp;
}

Eigen::VectorXd sample_action(const GaussianActionDistribution& dist, Rng& rng) {
  if (dist.logstd.size() != dist.mean.size()) {
    throw std::invalid_argument("mean and log-std lengths must agree");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd action(dist.mean.size());
  for (Eigen::Index j = 0; j < action.size(); ++j) {
    action[j] = dist.mean[j] + std::exp(dist.logstd[j]) * normal(rng);
  }
  return action;
}

double gaussian_entropy(const Eigen::VectorXd& logstd) {
  return logstd.sum() + static_cast<double>(logstd.size()) * (kHalfLog2Pi + 0.5);
}

Eigen::VectorXd logstd_of(const ParamVector& params, const ParamLayout& layout) {
  if (!layout.includes_logstd()) throw std::invalid_argument("layout has no log-std slots");
  check_params(params, layout);
  return params.segment(static_cast<Eigen::Index>(layout.logstd_offset()),
                        static_cast<Eigen::Index>(layout.output_dim()));
}

GaussianActionDistribution policy_distribution(const ParamVector& params,
                                               const ParamLayout& layout,
                                               const Eigen::VectorXd& obs) {
  return {mlp_forward(params, layout, obs), logstd_of(params, layout)};
}

ParamVector policy_logprob_grad(const ParamVector& params, const ParamLayout& layout,
                                const Eigen::VectorXd& obs, const Eigen::VectorXd& action) {
  const GaussianActionDistribution dist = policy_distribution(params, layout, obs);
  if (action.size() != dist.mean.size()) throw std::invalid_argument("action length does not match policy output");
  const Eigen::ArrayXd inv_var = (-2.0 * dist.logstd.array()).exp();
  const Eigen::ArrayXd diff = (action - dist.mean).array();
  const Eigen::MatrixXd mean_grad = (diff * inv_var).matrix();
  const Eigen::VectorXd logstd_grad = (diff.square() * inv_var - 1.0).matrix();
  return backprop(params, layout, obs, mean_grad, logstd_grad);
}

AdamState AdamState::zeros(std::size_t size, AdamConfig config) {
  const auto n = static_cast<Eigen::Index>(size);
  return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), 0, config};
}

namespace detail {

AdamCorrection adam_correction(const AdamConfig& config, std::int64_t step) {
  const auto t = static_cast<double>(step);
  return {config.learning_rate / (1.0 - std::pow(config.beta1, t)),
          1.0 - std::pow(config.beta2, t)};
}

void require_finite(const Eigen::Ref<const Eigen::VectorXd>& values, const char* what) {
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw std::runtime_error(std::string("non-finite ") + what + " at index " +
                               std::to_string(i));
    }
  }
}

}  // namespace detail

void adam_step(AdamState& state, ParamVector& params, const Eigen::VectorXd& grad) {
  if (params.size() != grad.size() || state.first_moment.size() != grad.size() ||
      state.second_moment.size() != grad.size()) {
    throw std::invalid_argument("adam_step: state, parameters and gradient lengths differ");
  }
  detail::require_finite(grad, "gradient");
  state.step_count += 1;
  const auto corr = detail::adam_correction(state.config, state.step_count);
  for (Eigen::Index i = 0; i < grad.size(); ++i) {
    detail::adam_coordinate(state.config, corr, state.first_moment[i], state.second_moment[i],
                            params[i], grad[i]);
  }
}

}  // namespace splitrl
