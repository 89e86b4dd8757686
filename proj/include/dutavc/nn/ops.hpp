#pragma once

#include <vector>

#include "dutavc/nn/autograd.hpp"

namespace dutavc::nn {

/// op(a) * op(b) for rank-2 operands.
Var matmul(const Var& a, const Var& b, bool transpose_a = false, bool transpose_b = false);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);

/// x[n, m] + b[m] on every row.
Var add_row_vector(const Var& x, const Var& b);
/// x[C, ...] + b[C] on every element of channel c.
Var add_channel_vector(const Var& x, const Var& b);
/// x[n, m] * gamma[m] + beta[m].
Var affine_rows(const Var& x, const Var& gamma, const Var& beta);
/// x[C, ...] * gamma[C] + beta[C].
Var affine_channels(const Var& x, const Var& gamma, const Var& beta);

Var relu(const Var& x);
Var silu(const Var& x);
Var softmax_rows(const Var& x);

/// Zero-mean, unit-variance normalisation of consecutive chunks of `chunk` elements.
Var normalize_chunks(const Var& x, std::size_t chunk, double eps = 1e-5);

Var reshape(const Var& x, std::vector<int> shape);
/// Concatenation along the leading axis.
Var concat0(const Var& a, const Var& b);

/// [F, C] -> [F, k*C] with zero "same" padding (k odd); column block j holds frame i + j - k/2.
Var im2col_1d(const Var& x, int kernel);
/// [C, H, W] -> [C*k*k, Ho*Wo]; row index c*k*k + ky*k + kx.
Var im2col_2d(const Var& x, int kernel, int stride, int pad);
/// [C, H, W] -> [C, 2H, 2W] nearest neighbour.
Var upsample_nearest2(const Var& x);
/// v[C] -> [C, H, W].
Var broadcast_spatial(const Var& v, int height, int width);
/// [C, H, W] -> [C, h, w], keeping the top-left corner.
Var crop_2d(const Var& x, int height, int width);

/// mean((pred - target)^2) over all elements.
Var mse_loss(const Var& pred, const Tensor& target);
/// sum_i mask_i (pred_i - target_i)^2 / sum_i mask_i over the flattened
/// tensors; zero when the mask is empty.
Var masked_mse_loss(const Var& pred, const std::vector<double>& target,
                    const std::vector<double>& mask);
/// Mean cross-entropy of rows of logits[n, P] against integer labels.
Var cross_entropy_rows(const Var& logits, const std::vector<int>& labels);

Var sum_all(const Var& x);
Var mean_all(const Var& x);

}  // namespace dutavc::nn
