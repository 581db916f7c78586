#pragma once

#include "m3fas/tensor.hpp"

#include <vector>

namespace m3fas {

// Differentiable primitives. Every op computes its forward result and, when a
// tape is active and gradients are requested, records a backward rule that
// accumulates into input grads.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);       // elementwise
Tensor scalar_mul(const Tensor& x, double c);
Tensor sum(const Tensor& x);                        // -> scalar
Tensor mean(const Tensor& x);                       // -> scalar

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);

// 2-D (m,k)x(k,n) or batched 3-D (B,m,k)x(B,k,n); the transpose flags apply
// to the last two axes.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
              bool transpose_b = false);

// x: (B, in), w: (in, out), bias: (out) or undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, Eigen::Index start, Eigen::Index len);
Tensor reshape(const Tensor& x, const Shape& new_shape);

// x: (B,C,H,W), w: (OC,IC,KH,KW), bias: (OC) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride = 1,
              int padding = 0);

Tensor maxpool2d(const Tensor& x, int k);                       // stride = k
Tensor adaptive_maxpool2d(const Tensor& x, Eigen::Index out_h, Eigen::Index out_w);
Tensor global_avgpool(const Tensor& x);                         // (B,C,H,W) -> (B,C)

// Batch normalization over (B,H,W) per channel. In training mode the batch
// statistics normalize and the running stats are updated in place; in
// inference mode the op is a pure affine map using the running stats.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, bool training,
                   double momentum = 0.1, double eps = 1e-5);

// Per-sample normalization over (C,H,W), no affine parameters.
Tensor layernorm2d(const Tensor& x, double eps = 1e-5);

// (1 - theta) * a + theta * b with a learnable scalar theta.
Tensor lerp_param(const Tensor& a, const Tensor& b, const Tensor& theta);

// gamma * x with a learnable scalar gamma.
Tensor scale_param(const Tensor& x, const Tensor& gamma);

// Mean binary cross-entropy from logits, computed in the log-sum-exp form.
// labels hold 0/1 and are not differentiated through.
Tensor bce_loss(const Tensor& logits, const Eigen::ArrayXd& labels);

// (B,C,H,W) -> (B, H*W, C) token layout for attention, and back.
Tensor nchw_to_tokens(const Tensor& x);
Tensor tokens_to_nchw(const Tensor& x, Eigen::Index channels, Eigen::Index h, Eigen::Index w);

}  // namespace m3fas
