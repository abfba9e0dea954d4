#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "atpnet/tensor.hpp"

namespace atp {

struct Conv2dOptions {
  std::array<std::int64_t, 2> stride{1, 1};
  std::array<std::int64_t, 2> padding{0, 0};
  std::array<std::int64_t, 2> dilation{1, 1};
  std::int64_t groups = 1;
};

// Output extent of one spatial axis under standard convolution arithmetic.
std::int64_t conv_output_extent(std::int64_t input, std::int64_t kernel, std::int64_t stride,
                                std::int64_t padding, std::int64_t dilation);

// Zero-padded grouped, strided, dilated 2-D cross-correlation.
//   out[n, o, y, x] = b[o] + sum_{c, ky, kx} w[o, c, ky, kx] *
//                     in[n, g*cpg + c, y*sy - py + ky*dy, x*sx - px + kx*dx]
// Tap k of a dilated kernel sits at offset k*dilation from the anchor, k = 0..K-1.
// weight: (out_channels, in_channels / groups, kh, kw); bias: (1, out_channels, 1, 1).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias,
                 const Conv2dOptions& options = {});

// Depthwise (groups = channels) convolution followed by a 1x1 pointwise
// convolution. depth_weight: (C, 1, k, k); point_weight: (C_out, C, 1, 1).
template <typename T>
Tensor<T> depthwise_separable_conv(const Tensor<T>& input, const Tensor<T>& depth_weight,
                                   const Tensor<T>& point_weight, const std::optional<Tensor<T>>& bias,
                                   std::int64_t padding = 0, std::int64_t dilation = 1);

// (b, c*s*s, h, w) -> (b, c, h*s, w*s) with
//   out[n, c, y*s + i, x*s + j] = in[n, c*s*s + i*s + j, y, x].
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& input, std::int64_t upscale);

// Inverse rearrangement of pixel_shuffle.
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& input, std::int64_t downscale);

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope);

// Channel-wise concatenation; earlier tensors occupy the leading channels.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  return concat_channels(std::vector<Tensor<T>>{a, b});
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

// Multiplies by a constant.
template <typename T>
Tensor<T> scale(const Tensor<T>& input, T factor);

// Multiplies by a learnable one-element tensor.
template <typename T>
Tensor<T> scale_by(const Tensor<T>& input, const Tensor<T>& factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& input);

// Mean squared error, returned as a one-element tensor.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& prediction, const Tensor<T>& target);

// Softmax attention over spatial positions. With N = h*w and per-batch
// matrices q: (cq, N), k: (cq, N), v: (cv, N):
//   A = softmax_rows(q^T k),  out[:, i] = sum_j A[i, j] v[:, j].
template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& query, const Tensor<T>& key, const Tensor<T>& value);

// Row-stochastic affinity matrices A, shaped (b, 1, N, N). No gradient.
template <typename T>
Tensor<T> attention_affinity(const Tensor<T>& query, const Tensor<T>& key);

}  // namespace atp
