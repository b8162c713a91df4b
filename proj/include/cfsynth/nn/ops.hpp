#pragma once

#include "cfsynth/nn/tensor.hpp"

#include <vector>

// Differentiable operators. Spatial tensors are channels-last: [B, H, W, C].
// Token tensors are [B, N, C].
namespace cfs::nn {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor reshape(const Tensor& x, const Shape& shape);

// Rows [begin, end) of axis 0.
Tensor slice0(const Tensor& x, int begin, int end);
Tensor concat(const Tensor& a, const Tensor& b, int axis);
// Swaps the two leading axes: [A, B, ...] -> [B, A, ...].
Tensor permute01(const Tensor& x);

// x[..., in] * w[in, out] (+ bias[out]); bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// Square kernel, weights laid out as [kernel*kernel*Cin, Cout] with
// (ky, kx, cin) row order. Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int kernel, int stride, int pad);

Tensor upsample2x(const Tensor& x);

// x[B, ..., C] + e[b, C] where e has B rows or a single broadcast row.
Tensor add_channel(const Tensor& x, const Tensor& e);

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Scaled dot-product multi-head attention. q: [B, N, H*dk], k: [Bk, M, H*dk],
// v: [Bv, M, H*dv] with Bk, Bv in {1, B} (a single row broadcasts).
// Heads occupy contiguous channel blocks.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

// Softmax probabilities [B, H, N, M] of the same attention, without recording.
std::vector<double> attention_probs(const Tensor& q, const Tensor& k, int heads);

// out[b, j, :] = x[b, index[j], :]
Tensor gather_rows(const Tensor& x, const std::vector<int>& index);

// [1, ...] -> [n, ...] by copying the single leading row.
Tensor repeat0(const Tensor& x, int n);

// x[B, S, C] * mask[B*S], the mask broadcast over channels; mask is constant.
Tensor mask_tokens(const Tensor& x, const std::vector<double>& mask);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);
Tensor l1(const Tensor& a, const Tensor& b);

}  // namespace cfs::nn
