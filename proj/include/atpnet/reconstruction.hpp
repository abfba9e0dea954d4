#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "atpnet/optim.hpp"
#include "atpnet/sampling.hpp"
#include "atpnet/tensor.hpp"

namespace atp {

// Depthwise k x k convolution followed by a biased 1x1 pointwise convolution,
// zero-padded to preserve spatial extents.
template <typename T>
struct DepthwiseSeparable {
  DepthwiseSeparable() = default;
  DepthwiseSeparable(const std::string& prefix, std::int64_t in_channels, std::int64_t out_channels,
                     std::int64_t kernel, std::mt19937_64& rng);

  Tensor<T> forward(const Tensor<T>& input) const;
  std::vector<Parameter<T>*> parameters() { return {&depth, &point, &bias}; }

  Parameter<T> depth;  // (C, 1, k, k)
  Parameter<T> point;  // (C_out, C, 1, 1)
  Parameter<T> bias;   // (1, C_out, 1, 1)
};

// Measurements -> initial image estimate: a 1x1 expansion to bs*bs*in
// channels, pixel shuffle by bs, then a depthwise-separable refinement
// across block seams.
template <typename T>
class InitialReconstructor {
 public:
  InitialReconstructor() = default;
  InitialReconstructor(const SamplerConfig& config, std::mt19937_64& rng);

  Tensor<T> forward(const Tensor<T>& measurements) const;

  // Sets the refinement to the identity map (centered delta, identity
  // pointwise, zero bias).
  void set_refine_identity();
  // Loads a linear block decoder: decoder is (in*bs*bs) x out_channels,
  // row-major, mapping one block's measurements to its pixels. Bias is zeroed.
  void set_linear_decoder(std::span<const T> decoder);

  std::vector<Parameter<T>*> parameters();

  Parameter<T> expand_weight;  // (in*bs*bs, out_channels, 1, 1)
  Parameter<T> expand_bias;    // (1, in*bs*bs, 1, 1)
  DepthwiseSeparable<T> refine;

 private:
  SamplerConfig config_;
};

// Minimum-norm linear inverse of a row-major rows x cols matrix, returned as
// a row-major cols x rows matrix.
std::vector<double> pseudo_inverse(std::span<const double> matrix, std::int64_t rows, std::int64_t cols);

struct ReconstructionConfig {
  std::int64_t features = 32;
  std::int64_t blocks = 3;
  // One dilated 3x3 convolution follows each base block.
  std::vector<std::int64_t> dilations{1, 2, 3};
  double beta = 0.2;
  double slope = 0.2;

  // Throws ConfigError on a malformed layout, including consecutive
  // dilation rates sharing a common divisor > 1.
  void validate() const;
};

// Densely connected block of three depthwise-separable layers:
//   y1 = F(L1(x)); y2 = F(L2(y1 ++ x)); y3 = F(L3(y2 ++ y1 ++ x)); g(x) = y3 + beta * x
template <typename T>
class BaseBlock {
 public:
  BaseBlock() = default;
  BaseBlock(const std::string& prefix, std::int64_t channels, T beta, T slope, std::mt19937_64& rng);

  std::int64_t channels() const { return channels_; }
  T beta() const { return beta_; }
  Tensor<T> forward(const Tensor<T>& x) const;
  std::vector<Parameter<T>*> parameters();

  std::vector<DepthwiseSeparable<T>> layers;

 private:
  std::int64_t channels_ = 0;
  T beta_ = 0;
  T slope_ = 0;
};

// Refinement network with a global residual:
//   Xc = F(head(x_hat)); base_0 = Xc; cur = Xc
//   for each stage i: base_i = F(g_i(cur) + base_{i-1}); cur = F(dilated_i(base_i))
//   out = tail(cur) + x_hat
template <typename T>
class DeepReconstructor {
 public:
  DeepReconstructor() = default;
  DeepReconstructor(std::int64_t image_channels, const ReconstructionConfig& config, std::mt19937_64& rng);

  const ReconstructionConfig& config() const { return config_; }
  Tensor<T> forward(const Tensor<T>& x_hat) const;
  std::vector<Parameter<T>*> parameters();

  Parameter<T> head_weight, head_bias;
  std::vector<BaseBlock<T>> blocks;
  std::vector<Parameter<T>> dilated_weights, dilated_biases;
  Parameter<T> tail_weight, tail_bias;

 private:
  ReconstructionConfig config_;
};

struct LayerSpec {
  std::int64_t kernel = 3;
  std::int64_t dilation = 1;
  std::int64_t stride = 1;
};

// Receptive-field extent of a chain of convolutions.
std::int64_t receptive_field(std::span<const LayerSpec> layers);

// The longest convolution chain through a DeepReconstructor.
std::vector<LayerSpec> deep_reconstructor_layers(const ReconstructionConfig& config);

}  // namespace atp
