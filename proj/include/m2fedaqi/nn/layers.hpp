#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "m2fedaqi/error.hpp"
#include "m2fedaqi/nn/tensor.hpp"
#include "m2fedaqi/nn/tensor_set.hpp"
#include "m2fedaqi/rng.hpp"

namespace m2fedaqi::nn {

enum class Mode { kTrain, kEval };

inline constexpr double kLayerNormEpsilon = 1e-5;

// ---------------------------------------------------------------------------
// Linear: y = x W^T + b, W is [out x in].

template <typename Scalar>
struct LinearLayer {
  ConstMatrixMap<Scalar> weight;
  ConstVectorMap<Scalar> bias;

  Index in_features() const { return weight.cols(); }
  Index out_features() const { return weight.rows(); }
};

template <typename Scalar>
struct LinearGrad {
  MatrixMap<Scalar> weight;
  VectorMap<Scalar> bias;
};

template <typename Scalar>
LinearLayer<Scalar> linear_view(const ParameterSet<Scalar>& params, std::string_view prefix) {
  const std::string p(prefix);
  auto w = params.matrix(p + ".weight");
  auto b = params.vector(p + ".bias");
  if (w.rows() != b.size()) {
    throw LayoutError(p + ": weight rows " + std::to_string(w.rows()) + " != bias length " +
                      std::to_string(b.size()));
  }
  return {w, b};
}

template <typename Scalar>
LinearGrad<Scalar> linear_grad_view(GradientSet<Scalar>& grads, std::string_view prefix) {
  const std::string p(prefix);
  return {grads.matrix(p + ".weight"), grads.vector(p + ".bias")};
}

template <typename Scalar>
Matrix<Scalar> linear_forward(const LinearLayer<Scalar>& layer, const Matrix<Scalar>& x) {
  if (x.cols() != layer.in_features()) {
    throw DimensionError("linear_forward: input " + shape_of(x) + " does not match weight " +
                         shape_of(layer.weight));
  }
  Matrix<Scalar> y = x * layer.weight.transpose();
  y.rowwise() += layer.bias.transpose();
  return y;
}

/// Accumulates dW and db into `grad` and returns dL/dx.
template <typename Scalar>
Matrix<Scalar> linear_backward(const LinearLayer<Scalar>& layer, const Matrix<Scalar>& x,
                               const Matrix<Scalar>& grad_out, LinearGrad<Scalar> grad) {
  if (grad_out.cols() != layer.out_features() || grad_out.rows() != x.rows()) {
    throw DimensionError("linear_backward: upstream gradient " + shape_of(grad_out) +
                         " does not match output of weight " + shape_of(layer.weight));
  }
  grad.weight.noalias() += grad_out.transpose() * x;
  grad.bias += grad_out.colwise().sum().transpose();
  return grad_out * layer.weight;
}

// ---------------------------------------------------------------------------
// Layer normalization over the feature axis, population variance.

template <typename Scalar>
struct LayerNormLayer {
  ConstVectorMap<Scalar> gain;
  ConstVectorMap<Scalar> shift;
  double epsilon = kLayerNormEpsilon;

  Index features() const { return gain.size(); }
};

template <typename Scalar>
struct LayerNormGrad {
  VectorMap<Scalar> gain;
  VectorMap<Scalar> shift;
};

template <typename Scalar>
struct LayerNormCache {
  Matrix<Scalar> normalized;
  Vector<Scalar> inv_std;
};

template <typename Scalar>
LayerNormLayer<Scalar> layer_norm_view(const ParameterSet<Scalar>& params, std::string_view prefix) {
  const std::string p(prefix);
  auto g = params.vector(p + ".gain");
  auto s = params.vector(p + ".shift");
  if (g.size() != s.size()) throw LayoutError(p + ": gain and shift lengths differ");
  return {g, s, kLayerNormEpsilon};
}

template <typename Scalar>
LayerNormGrad<Scalar> layer_norm_grad_view(GradientSet<Scalar>& grads, std::string_view prefix) {
  const std::string p(prefix);
  return {grads.vector(p + ".gain"), grads.vector(p + ".shift")};
}

template <typename Scalar>
Matrix<Scalar> layer_norm_forward(const LayerNormLayer<Scalar>& layer, const Matrix<Scalar>& x,
                                  LayerNormCache<Scalar>* cache = nullptr) {
  if (x.cols() != layer.features()) {
    throw DimensionError("layer_norm_forward: input " + shape_of(x) + " does not match " +
                         std::to_string(layer.features()) + " features");
  }
  const Index rows = x.rows();
  const double d = static_cast<double>(x.cols());
  Matrix<Scalar> normalized(rows, x.cols());
  Vector<Scalar> inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    const Eigen::RowVectorXd row = x.row(r).template cast<double>();
    const double mean = row.sum() / d;
    const double var = (row.array() - mean).square().sum() / d;
    const double inv = 1.0 / std::sqrt(var + layer.epsilon);
    normalized.row(r) = ((row.array() - mean) * inv).matrix().template cast<Scalar>();
    inv_std(r) = static_cast<Scalar>(inv);
  }
  Matrix<Scalar> y = normalized.array().rowwise() * layer.gain.transpose().array();
  y.rowwise() += layer.shift.transpose();
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const LayerNormLayer<Scalar>& layer, const LayerNormCache<Scalar>& cache,
                                   const Matrix<Scalar>& grad_out, LayerNormGrad<Scalar> grad) {
  const auto& xhat = cache.normalized;
  grad.gain += grad_out.cwiseProduct(xhat).colwise().sum().transpose();
  grad.shift += grad_out.colwise().sum().transpose();

  const Index rows = grad_out.rows();
  const double d = static_cast<double>(grad_out.cols());
  Matrix<Scalar> dx(rows, grad_out.cols());
  for (Index r = 0; r < rows; ++r) {
    const Eigen::RowVectorXd g =
        (grad_out.row(r).array() * layer.gain.transpose().array()).matrix().template cast<double>();
    const Eigen::RowVectorXd xh = xhat.row(r).template cast<double>();
    const double sum_g = g.sum();
    const double sum_gx = g.dot(xh);
    const double inv = static_cast<double>(cache.inv_std(r));
    dx.row(r) = ((inv / d) * (d * g.array() - sum_g - xh.array() * sum_gx)).matrix().template cast<Scalar>();
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ReLU and inverted dropout.

template <typename Scalar>
Matrix<Scalar> relu_forward(const Matrix<Scalar>& x) {
  return x.cwiseMax(Scalar(0));
}

/// `input` is the pre-activation; the subgradient at 0 is taken as 0.
template <typename Scalar>
Matrix<Scalar> relu_backward(const Matrix<Scalar>& input, const Matrix<Scalar>& grad_out) {
  return (input.array() > Scalar(0)).select(grad_out, Scalar(0));
}

inline void validate_dropout_rate(double p) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(p));
  }
}

template <typename Scalar>
struct DropoutCache {
  bool active = false;  // false: the layer acted as the identity
  Matrix<Scalar> mask;  // 0 or 1/(1-p) per element
};

template <typename Scalar>
Matrix<Scalar> dropout_forward(const Matrix<Scalar>& x, double p, Mode mode, RandomStream& rng,
                               DropoutCache<Scalar>* cache = nullptr) {
  validate_dropout_rate(p);
  if (mode == Mode::kEval || p == 0.0) {
    if (cache) cache->active = false;
    return x;
  }
  const Scalar scale = static_cast<Scalar>(1.0 / (1.0 - p));
  Matrix<Scalar> mask(x.rows(), x.cols());
  for (Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng.uniform() < p ? Scalar(0) : scale;
  }
  Matrix<Scalar> y = x.cwiseProduct(mask);
  if (cache) {
    cache->active = true;
    cache->mask = std::move(mask);
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> dropout_backward(const DropoutCache<Scalar>& cache, const Matrix<Scalar>& grad_out) {
  if (!cache.active) return grad_out;
  return grad_out.cwiseProduct(cache.mask);
}

}  // namespace m2fedaqi::nn
