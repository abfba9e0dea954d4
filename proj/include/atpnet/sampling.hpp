#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "atpnet/optim.hpp"
#include "atpnet/tensor.hpp"

namespace atp {

struct SamplerConfig {
  std::int64_t block_size = 32;
  double subrate = 0.25;
  std::int64_t in_channels = 1;

  // Throws ConfigError unless the configuration yields at least one filter.
  void validate() const;
};

// Number of sampling filters: floor(bs * bs * subrate * in_channels).
std::int64_t out_channels(const SamplerConfig& config);

enum class SamplerMode : std::uint8_t { kFloat = 0, kBinary = 1, kTernary = 2 };

const char* to_string(SamplerMode mode);

// {0,1}-valued pruning mask congruent to the sampling weight; 0 = pruned.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> values;

  std::size_t zero_count() const;
};

// +1 where value >= 0, -1 otherwise.
template <typename T>
constexpr T binarize(T value) {
  return value >= T(0) ? T(1) : T(-1);
}

template <typename T>
std::vector<T> binarize(std::span<const T> values);

// Straight-through gradients for the quantized sampling weight.
template <typename T>
struct SteGradients {
  std::vector<T> latent;
  T alpha = 0;
};

// Routes a gradient taken against the effective (quantized) weight back to
// the latent float weight. Binary: passed through unchanged. Ternary: masked
// entries receive zero, and alpha receives sum(sign(latent) * mask * grad).
// Float mode returns the gradient unchanged (no quantizer to bypass).
template <typename T>
SteGradients<T> ste_backward(SamplerMode mode, std::span<const T> latent, const Mask* mask,
                             std::span<const T> effective_grad);

// Throws InputSizeError unless both extents are >= block_size and divisible by it.
void validate_sample_extents(std::int64_t height, std::int64_t width, std::int64_t block_size);

// Block-based linear sampler: a stride-bs convolution with no bias and no
// activation. The latent float weight is what the optimizer updates; the
// forward pass uses latent, sign(latent), or alpha * sign(latent) * mask.
template <typename T>
class SamplingLayer {
 public:
  SamplingLayer() = default;
  SamplingLayer(const SamplerConfig& config, std::mt19937_64& rng);

  const SamplerConfig& config() const { return config_; }
  std::int64_t out_channels() const { return latent_.shape().n(); }
  Shape weight_shape() const { return latent_.shape(); }
  SamplerMode mode() const { return mode_; }

  Parameter<T>& latent() { return latent_; }
  const Parameter<T>& latent() const { return latent_; }
  Parameter<T>& alpha() { return alpha_; }
  const Parameter<T>& alpha() const { return alpha_; }
  const std::optional<Mask>& mask() const { return mask_; }

  // Switches between float and binary modes. Ternary requires ternarize().
  void set_mode(SamplerMode mode);

  // Installs the mask and enters ternary mode.
  void ternarize(Mask mask);

  // Sets alpha to mean |latent|; warns and returns 0 on an all-zero latent.
  T init_alpha();

  // Clamps the latent weight to [-1, 1].
  void clamp_latent();

  // The weight used by the forward pass, as a differentiable graph node.
  Tensor<T> effective_weight() const;
  // The same values without a graph.
  std::vector<T> effective_values() const;

  // image: (b, in_channels, H, W) with H, W multiples of block_size.
  // Returns (b, out_channels, H / bs, W / bs).
  Tensor<T> sample(const Tensor<T>& image) const;

  // Parameters that receive gradients in the current mode.
  std::vector<Parameter<T>*> trainable_parameters();

 private:
  SamplerConfig config_;
  Parameter<T> latent_;
  Parameter<T> alpha_;
  std::optional<Mask> mask_;
  SamplerMode mode_ = SamplerMode::kFloat;
};

}  // namespace atp
