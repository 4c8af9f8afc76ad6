// SPDX-License-Identifier: Apache-2.0
//
// Dense / activation / layer-norm building blocks with explicit forward
// caches and hand-written backward passes. Batches are row-major: one row
// per item.
#pragma once

#include <cmath>

#include "gendd/nn/param.hpp"

namespace gendd::nn {

/// Affine layer y = x W + b with W stored (in x out).
struct Dense {
  Param weight;
  Param bias;

  Dense() = default;
  Dense(std::string name, int in, int out)
      : weight(name + ".w", in, out), bias(name + ".b", 1, out) {}

  void init(Rng& rng) {
    init_dense_weight(weight, rng);
    bias.value.setZero();
  }

  int in_dim() const { return static_cast<int>(weight.value.rows()); }
  int out_dim() const { return static_cast<int>(weight.value.cols()); }

  Matrix forward(const Matrix& x) const {
    return (x * weight.value).rowwise() + bias.value.row(0);
  }

  /// Accumulates parameter grads; returns grad wrt the input.
  Matrix backward(const Matrix& x, const Matrix& grad_out) {
    weight.grad.noalias() += x.transpose() * grad_out;
    bias.grad.row(0) += grad_out.colwise().sum();
    return grad_out * weight.value.transpose();
  }

  ParamRefs params() { return {&weight, &bias}; }
};

inline Matrix silu(const Matrix& x) {
  return x.array() / (1.0 + (-x.array()).exp());
}

/// d silu / dx given the pre-activation input.
inline Matrix silu_grad(const Matrix& x) {
  const auto sig = 1.0 / (1.0 + (-x.array()).exp());
  return (sig * (1.0 + x.array() * (1.0 - sig))).matrix();
}

inline Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

inline Matrix relu_grad(const Matrix& x) {
  return (x.array() > 0.0).cast<double>().matrix();
}

/// Row-wise layer norm without learned affine (modulation supplies scale
/// and shift where needed).
struct LayerNormCache {
  Matrix normalized;   // y
  Vector inv_std;      // per row
};

inline Matrix layer_norm(const Matrix& x, LayerNormCache* cache, double eps = 1e-6) {
  const Eigen::Index d = x.cols();
  Vector mean = x.rowwise().mean();
  Matrix centered = x.colwise() - mean;
  Vector var = centered.array().square().rowwise().mean();
  Vector inv_std = (var.array() + eps).rsqrt();
  Matrix y = centered.array().colwise() * inv_std.array();
  if (cache) {
    cache->normalized = y;
    cache->inv_std = inv_std;
  }
  (void)d;
  return y;
}

inline Matrix layer_norm_backward(const LayerNormCache& cache, const Matrix& grad_out) {
  const double d = static_cast<double>(grad_out.cols());
  Vector mean_g = grad_out.rowwise().sum() / d;
  Vector mean_gy = (grad_out.array() * cache.normalized.array()).rowwise().sum() / d;
  Matrix gx = grad_out;
  gx.colwise() -= mean_g;
  gx.array() -= cache.normalized.array().colwise() * mean_gy.array();
  return (gx.array().colwise() * cache.inv_std.array()).matrix();
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double mx = p.row(r).maxCoeff();
    p.row(r) = (p.row(r).array() - mx).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

}  // namespace gendd::nn
