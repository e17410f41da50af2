#pragma once

#include <cmath>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace raki {

enum class Mode { Train, Infer };

// ---------------------------------------------------------------- ReLU

template <typename Scalar>
Tensor3<Scalar> relu_forward(Tensor3<Scalar> const &x) {
  Tensor3<Scalar> y = x;
  y.matrix() = x.matrix().cwiseMax(Scalar(0));
  return y;
}

/// Subgradient at exactly zero is zero.
template <typename Scalar>
Tensor3<Scalar> relu_backward(Tensor3<Scalar> const &x, Tensor3<Scalar> const &grad_out) {
  require_same_shape(x, grad_out, "relu_backward");
  Tensor3<Scalar> g = grad_out;
  g.matrix().array() *= (x.matrix().array() > Scalar(0)).template cast<Scalar>();
  return g;
}

// ---------------------------------------------------------------- batch norm

template <typename Scalar>
struct BatchNormState {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  BatchNormState() = default;
  explicit BatchNormState(Eigen::Index channels)
      : gamma(Vector::Ones(channels)), beta(Vector::Zero(channels)), running_mean(Vector::Zero(channels)),
        running_var(Vector::Ones(channels)) {}

  Eigen::Index channels() const { return gamma.size(); }

  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
  Scalar momentum = Scalar(0.1);
  Scalar epsilon = Scalar(1e-5);
};

/// Saved by a train-mode forward pass for the backward pass.
template <typename Scalar>
struct BatchNormCache {
  std::vector<Tensor3<Scalar>> normalized;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std;
};

template <typename Scalar>
struct BatchNormGrads {
  std::vector<Tensor3<Scalar>> input;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> gamma;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> beta;
};

namespace detail {
template <typename Scalar>
void require_bn_batch(std::vector<Tensor3<Scalar>> const &batch, Eigen::Index channels) {
  if (batch.empty()) throw EmptyBatchError("batchnorm: empty batch");
  for (auto const &t : batch) {
    if (t.channels() != channels) {
      throw ShapeError("batchnorm: sample has " + std::to_string(t.channels()) + " channels, state has " +
                       std::to_string(channels));
    }
    if (t.height() != batch.front().height() || t.width() != batch.front().width()) {
      throw ShapeError("batchnorm: samples differ in spatial size");
    }
  }
}
} // namespace detail

namespace detail {
// y_c = scale_c * x_c + shift_c, channel by channel (rows are contiguous).
template <typename Scalar>
Tensor3<Scalar> channel_affine(Tensor3<Scalar> const &x, Eigen::Matrix<Scalar, Eigen::Dynamic, 1> const &scale,
                               Eigen::Matrix<Scalar, Eigen::Dynamic, 1> const &shift) {
  Tensor3<Scalar> y(x.channels(), x.height(), x.width());
  for (Eigen::Index c = 0; c < x.channels(); ++c) {
    y.matrix().row(c).array() = x.matrix().row(c).array() * scale(c) + shift(c);
  }
  return y;
}
} // namespace detail

/// Inference-mode normalization with the running statistics.
template <typename Scalar>
std::vector<Tensor3<Scalar>> batchnorm_infer(std::vector<Tensor3<Scalar>> const &batch,
                                             BatchNormState<Scalar> const &state) {
  detail::require_bn_batch(batch, state.channels());
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> const scale =
      (state.gamma.array() * (state.running_var.array() + state.epsilon).rsqrt()).matrix();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> const shift = state.beta - scale.cwiseProduct(state.running_mean);
  std::vector<Tensor3<Scalar>> out;
  out.reserve(batch.size());
  for (auto const &t : batch) out.push_back(detail::channel_affine(t, scale, shift));
  return out;
}

/// Per-channel normalization over (batch, height, width). Train mode uses the
/// biased batch variance for normalization and folds the unbiased variance
/// into the running estimate; infer mode uses the running statistics only.
template <typename Scalar>
std::vector<Tensor3<Scalar>> batchnorm_forward(std::vector<Tensor3<Scalar>> const &batch,
                                               BatchNormState<Scalar> &state, Mode mode,
                                               BatchNormCache<Scalar> *cache = nullptr) {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  if (mode == Mode::Infer) return batchnorm_infer(batch, state);
  auto const channels = state.channels();
  detail::require_bn_batch(batch, channels);

  auto const count = static_cast<Scalar>(batch.size() * static_cast<std::size_t>(batch.front().plane()));
  Vector mean = Vector::Zero(channels);
  for (auto const &t : batch) mean += t.matrix().rowwise().sum();
  mean /= count;
  Vector var = Vector::Zero(channels);
  for (auto const &t : batch) {
    for (Eigen::Index c = 0; c < channels; ++c) var(c) += (t.matrix().row(c).array() - mean(c)).square().sum();
  }
  var /= count;
  Scalar const unbias = count > 1 ? count / (count - 1) : Scalar(1);
  state.running_mean = (1 - state.momentum) * state.running_mean + state.momentum * mean;
  state.running_var = (1 - state.momentum) * state.running_var + state.momentum * unbias * var;
  Vector const inv_std = (var.array() + state.epsilon).rsqrt().matrix();
  Vector const neg_mean_scaled = -mean.cwiseProduct(inv_std);

  std::vector<Tensor3<Scalar>> out;
  out.reserve(batch.size());
  if (cache) {
    cache->normalized.clear();
    cache->inv_std = inv_std;
  }
  for (auto const &t : batch) {
    Tensor3<Scalar> xhat = detail::channel_affine(t, inv_std, neg_mean_scaled);
    out.push_back(detail::channel_affine(xhat, state.gamma, state.beta));
    if (cache) cache->normalized.push_back(std::move(xhat));
  }
  return out;
}

/// Backward of a train-mode forward pass.
template <typename Scalar>
BatchNormGrads<Scalar> batchnorm_backward(std::vector<Tensor3<Scalar>> const &grad_out,
                                          BatchNormState<Scalar> const &state, BatchNormCache<Scalar> const &cache) {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  auto const channels = state.channels();
  detail::require_bn_batch(grad_out, channels);
  if (grad_out.size() != cache.normalized.size()) throw ShapeError("batchnorm_backward: batch size mismatch");

  BatchNormGrads<Scalar> g;
  g.beta = Vector::Zero(channels);
  g.gamma = Vector::Zero(channels);
  for (std::size_t b = 0; b < grad_out.size(); ++b) {
    g.beta += grad_out[b].matrix().rowwise().sum();
    for (Eigen::Index c = 0; c < channels; ++c) {
      g.gamma(c) += grad_out[b].matrix().row(c).dot(cache.normalized[b].matrix().row(c));
    }
  }
  // dx = gamma * inv_std / N * (N * dy - sum(dy) - xhat * sum(dy * xhat))
  auto const count = static_cast<Scalar>(grad_out.size() * static_cast<std::size_t>(grad_out.front().plane()));
  Vector const scale = (state.gamma.array() * cache.inv_std.array() / count).matrix();
  g.input.reserve(grad_out.size());
  for (std::size_t b = 0; b < grad_out.size(); ++b) {
    Tensor3<Scalar> dx(grad_out[b].channels(), grad_out[b].height(), grad_out[b].width());
    for (Eigen::Index c = 0; c < channels; ++c) {
      dx.matrix().row(c).array() = scale(c) * (count * grad_out[b].matrix().row(c).array() - g.beta(c) -
                                               g.gamma(c) * cache.normalized[b].matrix().row(c).array());
    }
    g.input.push_back(std::move(dx));
  }
  return g;
}

// ---------------------------------------------------------------- dropout

template <typename Scalar>
struct DropoutResult {
  Tensor3<Scalar> output;
  /// 0 for dropped elements, 1/(1-rate) for survivors. Empty in infer mode.
  Tensor3<Scalar> mask;
};

/// Inverted dropout: survivors are scaled in train mode so inference is the
/// identity.
template <typename Scalar>
DropoutResult<Scalar> dropout_forward(Tensor3<Scalar> const &x, double rate, Rng &rng, Mode mode) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout rate must be in [0, 1)");
  if (mode == Mode::Infer || rate == 0.0) return {x, Tensor3<Scalar>()};
  Tensor3<Scalar> mask(x.channels(), x.height(), x.width());
  Scalar const keep = Scalar(1.0 / (1.0 - rate));
  Scalar *m = mask.data();
  for (Eigen::Index i = 0; i < mask.size(); ++i) m[i] = rng.uniform() < rate ? Scalar(0) : keep;
  Tensor3<Scalar> y = x;
  y.matrix() = x.matrix().cwiseProduct(mask.matrix());
  return {std::move(y), std::move(mask)};
}

template <typename Scalar>
Tensor3<Scalar> dropout_backward(Tensor3<Scalar> const &grad_out, Tensor3<Scalar> const &mask) {
  if (mask.size() == 0) return grad_out;
  require_same_shape(grad_out, mask, "dropout_backward");
  Tensor3<Scalar> g = grad_out;
  g.matrix() = grad_out.matrix().cwiseProduct(mask.matrix());
  return g;
}

// ---------------------------------------------------------------- L1 loss

template <typename Scalar>
struct LossResult {
  Scalar loss;
  Tensor3<Scalar> grad;
};

/// mean(|pred - target|) with gradient sign(pred - target)/N, sign(0) = 0.
template <typename Scalar>
LossResult<Scalar> l1_loss(Tensor3<Scalar> const &pred, Tensor3<Scalar> const &target) {
  require_same_shape(pred, target, "l1_loss");
  auto const n = static_cast<Scalar>(pred.size());
  auto const diff = (pred.matrix() - target.matrix()).eval();
  LossResult<Scalar> r{diff.cwiseAbs().sum() / n, Tensor3<Scalar>(pred.channels(), pred.height(), pred.width())};
  r.grad.matrix() = diff.unaryExpr([n](Scalar d) { return d > 0 ? Scalar(1) / n : d < 0 ? Scalar(-1) / n : Scalar(0); });
  return r;
}

} // namespace raki
