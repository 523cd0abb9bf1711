#pragma once

// Differentiable tensor ops. Every op validates shapes (ValidationError),
// rejects non-finite results (NumericalError) and records its backward pass
// when any input requires grad.

#include <cstddef>
#include <optional>
#include <vector>

#include "gaze/tensor.hpp"

namespace gaze::ops {

/// Guard used by every normalization op.
inline constexpr double kNormEps = 1e-12;

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

/// x: [B x N] plus bias [N] on every row.
template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias);
/// x: [B x in], weight: [in x out], bias: [out].
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);

struct Conv2dOptions {
  std::size_t dilation = 1;
  std::size_t stride = 1;
  /// Zero padding on every side; nullopt means "same" (stride 1 only),
  /// i.e. (k_eff - 1) / 2 with k_eff = k + (k - 1)(dilation - 1).
  std::optional<std::size_t> padding;
};

inline std::size_t effective_kernel_extent(std::size_t k, std::size_t dilation) {
  return k + (k - 1) * (dilation - 1);
}

/// Dilated cross-correlation. x: [B x Cin x H x W], weight: [Cout x Cin x k x k]
/// with k odd, bias: [Cout].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, const Conv2dOptions& options = {});

/// Non-overlapping window average with the given window (stride == window).
/// Trailing rows/columns that do not fill a window are dropped.
template <typename T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& x, std::size_t window);
/// [B x C x H x W] -> [B x C]
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);
/// [B x C x H x W] -> [B x C*H*W]
template <typename T>
BasicTensor<T> flatten(const BasicTensor<T>& x);

/// Concatenates [B x Ci x H x W] maps along the channel axis.
template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& xs);
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::size_t begin, std::size_t count);

/// Stacks [Bi x D] matrices vertically.
template <typename T>
BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& xs);

/// Each row divided by max(||row||, eps).
template <typename T>
BasicTensor<T> l2_normalize(const BasicTensor<T>& x, double eps = kNormEps);

/// Column-wise (x - mean) / sqrt(var + eps) with the population variance.
/// Requires at least two rows.
template <typename T>
BasicTensor<T> batch_standardize(const BasicTensor<T>& x, double eps = kNormEps);

/// Mean over rows i of  logsumexp_{k != i} logits[i,k] - logits[i, positives[i]].
/// logits is square; positives[i] != i. The logsumexp is max-shifted.
template <typename T>
BasicTensor<T> cross_entropy_excluding_self(const BasicTensor<T>& logits,
                                            const std::vector<std::size_t>& positives);

/// Sum of squared off-diagonal entries of a square matrix.
template <typename T>
BasicTensor<T> off_diagonal_square_sum(const BasicTensor<T>& c);

/// Mean elementwise Huber penalty of pred - target with threshold delta.
template <typename T>
BasicTensor<T> huber(const BasicTensor<T>& pred, const BasicTensor<T>& target, double delta);

}  // namespace gaze::ops
