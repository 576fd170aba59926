#pragma once

// Multimodal air-quality network: an image projection branch, a tabular MLP
// branch with a residual skip, FiLM-style fusion in which the tabular
// embedding produces a per-channel gain and bias for the visual embedding,
// and a small prediction head. Templated on the scalar so the same code runs
// in float for training and in double for gradient checking.

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "m2fedaqi/error.hpp"
#include "m2fedaqi/model_config.hpp"
#include "m2fedaqi/nn/layers.hpp"
#include "m2fedaqi/nn/tensor_set.hpp"
#include "m2fedaqi/rng.hpp"

namespace m2fedaqi {

using nn::Index;
using nn::Matrix;
using nn::Mode;
using nn::ParameterSet;
using nn::GradientSet;
using nn::Vector;

template <typename Scalar>
struct Batch {
  Matrix<Scalar> image;         // [b x d_img]; may have zero columns for tabular-only models
  Matrix<Scalar> tabular;       // [b x d_tab]; may have zero columns for image-only models
  std::vector<int> labels;      // 0-based class index
  std::vector<Scalar> values;   // raw regression targets

  Index size() const { return std::max(image.rows(), tabular.rows()); }
};

/// Intermediate tensors of one forward pass. The public members are the
/// named embeddings; `detail` holds what the backward pass needs.
template <typename Scalar>
struct ForwardTrace {
  Matrix<Scalar> z_img;   // [b x d_emb]
  Matrix<Scalar> z_tab;   // [b x d_emb]
  Matrix<Scalar> gamma;   // [b x d_emb]
  Matrix<Scalar> beta;    // [b x d_emb]
  Matrix<Scalar> z_mod;   // [b x d_emb]
  Matrix<Scalar> z_mm;    // [b x d_fused]

  struct Detail {
    Matrix<Scalar> img_pre, img_norm;
    nn::LayerNormCache<Scalar> img_ln;
    nn::DropoutCache<Scalar> img_drop;

    Matrix<Scalar> tab_pre1, tab_norm1, tab_h1;
    nn::LayerNormCache<Scalar> tab_ln1;
    nn::DropoutCache<Scalar> tab_drop1;
    Matrix<Scalar> tab_pre2, tab_norm2;
    nn::LayerNormCache<Scalar> tab_ln2;
    nn::DropoutCache<Scalar> tab_drop2;

    Matrix<Scalar> head_pre, head_norm, head_h;
    nn::LayerNormCache<Scalar> head_ln;
    nn::DropoutCache<Scalar> head_drop;
  } detail;
};

template <typename Scalar>
struct ForwardResult {
  Matrix<Scalar> output;  // logits [b x C] or standardized regression output [b x 1]
  ForwardTrace<Scalar> trace;
};

namespace model_detail {

inline void add_linear(nn::Layout& layout, const std::string& prefix, int in, int out) {
  layout.append(prefix + ".weight", {out, in});
  layout.append(prefix + ".bias", {out});
}

inline void add_norm(nn::Layout& layout, const std::string& prefix, int d) {
  layout.append(prefix + ".gain", {d});
  layout.append(prefix + ".shift", {d});
}

}  // namespace model_detail

/// z_mod = gamma * z_img + beta, element-wise.
template <typename Scalar>
Matrix<Scalar> film_modulate(const Matrix<Scalar>& gamma, const Matrix<Scalar>& beta, const Matrix<Scalar>& z_img) {
  if (gamma.rows() != z_img.rows() || gamma.cols() != z_img.cols() || beta.rows() != z_img.rows() ||
      beta.cols() != z_img.cols()) {
    throw DimensionError("film_modulate: gamma " + nn::shape_of(gamma) + ", beta " + nn::shape_of(beta) +
                         " and z_img " + nn::shape_of(z_img) + " differ");
  }
  return gamma.cwiseProduct(z_img) + beta;
}

/// Entry order: image projection, tabular block (+ skip projection), fusion, head.
inline nn::Layout model_layout(const ModelConfig& cfg) {
  using model_detail::add_linear;
  using model_detail::add_norm;
  cfg.validate();
  nn::Layout layout;
  const int e = cfg.d_emb;
  if (cfg.has_image()) {
    add_linear(layout, "img.proj", cfg.d_img_in, e);
    add_norm(layout, "img.norm", e);
  }
  if (cfg.has_tabular()) {
    add_linear(layout, "tab.fc1", cfg.d_tab_in, e);
    add_norm(layout, "tab.norm1", e);
    add_linear(layout, "tab.fc2", e, e);
    add_norm(layout, "tab.norm2", e);
    if (cfg.has_skip_projection()) add_linear(layout, "tab.skip", cfg.d_tab_in, e);
  }
  if (cfg.has_fusion_layer()) add_linear(layout, "fusion.film", e, 2 * e);
  add_linear(layout, "head.fc1", cfg.d_fused(), e);
  add_norm(layout, "head.norm", e);
  add_linear(layout, "head.out", e, cfg.output_dim());
  return layout;
}

/// Linear weights ~ U[-sqrt(1/fan_in), sqrt(1/fan_in)] from a per-entry
/// stream; biases 0; LayerNorm gain 1, shift 0. The gain half of the fusion
/// bias starts at 1 so modulation begins as the identity.
template <typename Scalar>
ParameterSet<Scalar> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  ParameterSet<Scalar> params(model_layout(cfg));
  const RandomStream init = RandomStream(seed).derive("init");
  for (const auto& entry : params.layout().entries()) {
    const std::string& name = entry.name;
    auto values = params.values().segment(static_cast<Index>(entry.offset), static_cast<Index>(entry.numel()));
    if (name.ends_with(".weight")) {
      RandomStream rng = init.derive(name);
      const double bound = std::sqrt(1.0 / static_cast<double>(entry.shape[1]));
      for (Index i = 0; i < values.size(); ++i) values(i) = static_cast<Scalar>((2.0 * rng.uniform() - 1.0) * bound);
    } else if (name.ends_with(".gain")) {
      values.setOnes();
    } else {
      values.setZero();
    }
  }
  if (cfg.has_fusion_layer()) params.vector("fusion.film.bias").head(cfg.d_emb).setOnes();
  return params;
}

template <typename Scalar>
ForwardResult<Scalar> forward(const ParameterSet<Scalar>& params, const ModelConfig& cfg,
                              const Matrix<Scalar>& x_img, const Matrix<Scalar>& x_tab, Mode mode,
                              const RandomStream& rng) {
  using namespace nn;
  ForwardResult<Scalar> result;
  auto& t = result.trace;
  auto& d = t.detail;
  const double p = cfg.dropout_p;
  const int e = cfg.d_emb;

  Index batch = -1;
  if (cfg.has_image()) {
    if (x_img.cols() != cfg.d_img_in) {
      throw DimensionError("forward: image input " + shape_of(x_img) + " expects " +
                           std::to_string(cfg.d_img_in) + " columns");
    }
    batch = x_img.rows();
    RandomStream drop = rng.derive("img.drop");
    d.img_pre = linear_forward(linear_view(params, "img.proj"), x_img);
    d.img_norm = layer_norm_forward(layer_norm_view(params, "img.norm"), d.img_pre, &d.img_ln);
    t.z_img = dropout_forward(relu_forward(d.img_norm), p, mode, drop, &d.img_drop);
  }
  if (cfg.has_tabular()) {
    if (x_tab.cols() != cfg.d_tab_in) {
      throw DimensionError("forward: tabular input " + shape_of(x_tab) + " expects " +
                           std::to_string(cfg.d_tab_in) + " columns");
    }
    if (batch >= 0 && x_tab.rows() != batch) {
      throw DimensionError("forward: image batch " + shape_of(x_img) + " and tabular batch " +
                           shape_of(x_tab) + " differ in rows");
    }
    batch = x_tab.rows();
    RandomStream drop1 = rng.derive("tab.drop1");
    RandomStream drop2 = rng.derive("tab.drop2");
    d.tab_pre1 = linear_forward(linear_view(params, "tab.fc1"), x_tab);
    d.tab_norm1 = layer_norm_forward(layer_norm_view(params, "tab.norm1"), d.tab_pre1, &d.tab_ln1);
    d.tab_h1 = dropout_forward(relu_forward(d.tab_norm1), p, mode, drop1, &d.tab_drop1);
    d.tab_pre2 = linear_forward(linear_view(params, "tab.fc2"), d.tab_h1);
    if (cfg.use_skip) {
      if (cfg.has_skip_projection()) {
        d.tab_pre2 += linear_forward(linear_view(params, "tab.skip"), x_tab);
      } else {
        d.tab_pre2 += x_tab;
      }
    }
    d.tab_norm2 = layer_norm_forward(layer_norm_view(params, "tab.norm2"), d.tab_pre2, &d.tab_ln2);
    t.z_tab = dropout_forward(relu_forward(d.tab_norm2), p, mode, drop2, &d.tab_drop2);
  }

  switch (cfg.modality) {
    case Modality::kImageOnly:
      t.z_mm = t.z_img;
      break;
    case Modality::kTabularOnly:
      t.z_mm = t.z_tab;
      break;
    case Modality::kBoth: {
      t.z_mm.resize(batch, 2 * e);
      if (cfg.use_film_fusion) {
        const Matrix<Scalar> film = linear_forward(linear_view(params, "fusion.film"), t.z_tab);
        t.gamma = film.leftCols(e);
        t.beta = film.rightCols(e);
        t.z_mod = film_modulate(t.gamma, t.beta, t.z_img);
        t.z_mm.leftCols(e) = t.z_mod;
      } else {
        t.z_mm.leftCols(e) = t.z_img;
      }
      t.z_mm.rightCols(e) = t.z_tab;
      break;
    }
  }

  RandomStream head_drop = rng.derive("head.drop");
  d.head_pre = linear_forward(linear_view(params, "head.fc1"), t.z_mm);
  d.head_norm = layer_norm_forward(layer_norm_view(params, "head.norm"), d.head_pre, &d.head_ln);
  d.head_h = dropout_forward(relu_forward(d.head_norm), p, mode, head_drop, &d.head_drop);
  result.output = linear_forward(linear_view(params, "head.out"), d.head_h);
  return result;
}

/// Back-propagates dL/d(output) through a recorded forward pass.
template <typename Scalar>
GradientSet<Scalar> backward(const ParameterSet<Scalar>& params, const ModelConfig& cfg,
                             const Matrix<Scalar>& x_img, const Matrix<Scalar>& x_tab,
                             const ForwardTrace<Scalar>& t, const Matrix<Scalar>& grad_output) {
  using namespace nn;
  GradientSet<Scalar> g = zero_gradients(params);
  const auto& d = t.detail;
  const int e = cfg.d_emb;

  Matrix<Scalar> dh = linear_backward(linear_view(params, "head.out"), d.head_h, grad_output,
                                      linear_grad_view(g, "head.out"));
  dh = relu_backward(d.head_norm, dropout_backward(d.head_drop, dh));
  dh = layer_norm_backward(layer_norm_view(params, "head.norm"), d.head_ln, dh,
                           layer_norm_grad_view(g, "head.norm"));
  const Matrix<Scalar> dz_mm =
      linear_backward(linear_view(params, "head.fc1"), t.z_mm, dh, linear_grad_view(g, "head.fc1"));

  Matrix<Scalar> dz_img, dz_tab;
  switch (cfg.modality) {
    case Modality::kImageOnly:
      dz_img = dz_mm;
      break;
    case Modality::kTabularOnly:
      dz_tab = dz_mm;
      break;
    case Modality::kBoth: {
      dz_tab = dz_mm.rightCols(e);
      if (cfg.use_film_fusion) {
        const Matrix<Scalar> dz_mod = dz_mm.leftCols(e);
        dz_img = dz_mod.cwiseProduct(t.gamma);
        Matrix<Scalar> dfilm(dz_mod.rows(), 2 * e);
        dfilm.leftCols(e) = dz_mod.cwiseProduct(t.z_img);
        dfilm.rightCols(e) = dz_mod;
        dz_tab += linear_backward(linear_view(params, "fusion.film"), t.z_tab, dfilm,
                                  linear_grad_view(g, "fusion.film"));
      } else {
        dz_img = dz_mm.leftCols(e);
      }
      break;
    }
  }

  if (cfg.has_image()) {
    Matrix<Scalar> da = relu_backward(d.img_norm, dropout_backward(d.img_drop, dz_img));
    da = layer_norm_backward(layer_norm_view(params, "img.norm"), d.img_ln, da,
                             layer_norm_grad_view(g, "img.norm"));
    linear_backward(linear_view(params, "img.proj"), x_img, da, linear_grad_view(g, "img.proj"));
  }
  if (cfg.has_tabular()) {
    Matrix<Scalar> da2 = relu_backward(d.tab_norm2, dropout_backward(d.tab_drop2, dz_tab));
    da2 = layer_norm_backward(layer_norm_view(params, "tab.norm2"), d.tab_ln2, da2,
                              layer_norm_grad_view(g, "tab.norm2"));
    if (cfg.has_skip_projection()) {
      linear_backward(linear_view(params, "tab.skip"), x_tab, da2, linear_grad_view(g, "tab.skip"));
    }
    Matrix<Scalar> dh1 =
        linear_backward(linear_view(params, "tab.fc2"), d.tab_h1, da2, linear_grad_view(g, "tab.fc2"));
    dh1 = relu_backward(d.tab_norm1, dropout_backward(d.tab_drop1, dh1));
    dh1 = layer_norm_backward(layer_norm_view(params, "tab.norm1"), d.tab_ln1, dh1,
                              layer_norm_grad_view(g, "tab.norm1"));
    linear_backward(linear_view(params, "tab.fc1"), x_tab, dh1, linear_grad_view(g, "tab.fc1"));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Losses.

template <typename Scalar>
struct LossResult {
  Scalar loss = 0;
  Matrix<Scalar> grad_output;
};

inline void check_label(int label, int num_classes, Index row) {
  if (label < 0 || label >= num_classes) {
    throw DataError("target class " + std::to_string(label) + " at row " + std::to_string(row) +
                    " outside [0, " + std::to_string(num_classes) + ")");
  }
}

/// Batch-mean cross-entropy on raw logits, via log-sum-exp.
template <typename Scalar>
LossResult<Scalar> cross_entropy(const Matrix<Scalar>& logits, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != logits.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         nn::shape_of(logits));
  }
  LossResult<Scalar> r;
  r.grad_output.resize(logits.rows(), logits.cols());
  const double inv_b = 1.0 / static_cast<double>(logits.rows());
  double total = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    check_label(labels[i], static_cast<int>(logits.cols()), i);
    const Eigen::RowVectorXd row = logits.row(i).template cast<double>();
    const double m = row.maxCoeff();
    const Eigen::RowVectorXd ex = (row.array() - m).exp().matrix();
    const double s = ex.sum();
    total += m + std::log(s) - row(labels[i]);
    Eigen::RowVectorXd grad = ex / s;
    grad(labels[i]) -= 1.0;
    r.grad_output.row(i) = (grad * inv_b).template cast<Scalar>();
  }
  r.loss = static_cast<Scalar>(total * inv_b);
  return r;
}

/// Batch-mean absolute error between the output column and standardized
/// targets. The subgradient at zero residual is 0.
template <typename Scalar>
LossResult<Scalar> mean_absolute_error(const Matrix<Scalar>& output, std::span<const Scalar> targets,
                                       double target_mean = 0.0, double target_scale = 1.0) {
  if (output.cols() != 1 || static_cast<Index>(targets.size()) != output.rows()) {
    throw DimensionError("mean_absolute_error: " + std::to_string(targets.size()) + " targets for output " +
                         nn::shape_of(output));
  }
  LossResult<Scalar> r;
  r.grad_output.resize(output.rows(), 1);
  const double inv_b = 1.0 / static_cast<double>(output.rows());
  double total = 0.0;
  for (Index i = 0; i < output.rows(); ++i) {
    if (!std::isfinite(static_cast<double>(targets[i]))) {
      throw DataError("non-finite regression target at row " + std::to_string(i));
    }
    const Scalar target = static_cast<Scalar>((static_cast<double>(targets[i]) - target_mean) / target_scale);
    const Scalar diff = output(i, 0) - target;
    total += std::abs(static_cast<double>(diff));
    const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
    r.grad_output(i, 0) = static_cast<Scalar>(sign * inv_b);
  }
  r.loss = static_cast<Scalar>(total * inv_b);
  return r;
}

template <typename Scalar>
LossResult<Scalar> task_loss(const Matrix<Scalar>& output, const Batch<Scalar>& batch, const ModelConfig& cfg) {
  if (cfg.task == Task::kClassification) return cross_entropy<Scalar>(output, batch.labels);
  return mean_absolute_error<Scalar>(output, batch.values, cfg.target_mean, cfg.target_scale);
}

/// Train-mode forward, task loss and full backward pass.
template <typename Scalar>
std::pair<Scalar, GradientSet<Scalar>> loss_and_grad(const ParameterSet<Scalar>& params, const ModelConfig& cfg,
                                                     const Batch<Scalar>& batch, const RandomStream& rng,
                                                     Mode mode = Mode::kTrain) {
  auto fwd = forward(params, cfg, batch.image, batch.tabular, mode, rng);
  auto loss = task_loss(fwd.output, batch, cfg);
  auto grads = backward(params, cfg, batch.image, batch.tabular, fwd.trace, loss.grad_output);
  return {loss.loss, std::move(grads)};
}

template <typename Scalar>
Scalar evaluate_loss(const ParameterSet<Scalar>& params, const ModelConfig& cfg, const Batch<Scalar>& batch,
                     const RandomStream& rng, Mode mode = Mode::kEval) {
  auto fwd = forward(params, cfg, batch.image, batch.tabular, mode, rng);
  return task_loss(fwd.output, batch, cfg).loss;
}

/// Row-wise softmax of logits, computed in double.
template <typename Scalar>
Eigen::MatrixXd softmax(const Matrix<Scalar>& logits) {
  Eigen::MatrixXd probs = logits.template cast<double>();
  for (Index i = 0; i < probs.rows(); ++i) {
    const double m = probs.row(i).maxCoeff();
    probs.row(i) = (probs.row(i).array() - m).exp().matrix();
    probs.row(i) /= probs.row(i).sum();
  }
  return probs;
}

/// Maps standardized regression outputs back to raw target units.
template <typename Scalar>
std::vector<double> raw_regression_values(const Matrix<Scalar>& output, const ModelConfig& cfg) {
  std::vector<double> out(static_cast<std::size_t>(output.rows()));
  for (Index i = 0; i < output.rows(); ++i) {
    out[static_cast<std::size_t>(i)] =
        static_cast<double>(output(i, 0)) * cfg.target_scale + cfg.target_mean;
  }
  return out;
}

}  // namespace m2fedaqi
