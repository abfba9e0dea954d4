#include "atpnet/sampling.hpp"

#include <cmath>

#include "atpnet/errors.hpp"
#include "atpnet/log.hpp"
#include "atpnet/ops.hpp"

namespace atp {

void SamplerConfig::validate() const {
  if (block_size < 1) throw ConfigError("block size must be >= 1, got " + std::to_string(block_size));
  if (!(subrate > 0.0 && subrate <= 1.0)) {
    throw ConfigError("subrate must lie in (0, 1], got " + std::to_string(subrate));
  }
  if (in_channels < 1) throw ConfigError("in_channels must be >= 1, got " + std::to_string(in_channels));
  if (out_channels(*this) < 1) {
    throw ConfigError("block size " + std::to_string(block_size) + " with subrate " + std::to_string(subrate) +
                      " yields no sampling filters");
  }
}

std::int64_t out_channels(const SamplerConfig& config) {
  const double exact = static_cast<double>(config.block_size * config.block_size) * config.subrate *
                       static_cast<double>(config.in_channels);
  // The tolerance absorbs representation error such as 0.29 * 100 = 28.999...
  const auto count = static_cast<std::int64_t>(std::floor(exact + 1e-9));
  if (count < 1) {
    throw ConfigError("sampling layer would have " + std::to_string(count) + " output channels (bs=" +
                      std::to_string(config.block_size) + ", subrate=" + std::to_string(config.subrate) + ")");
  }
  return count;
}

const char* to_string(SamplerMode mode) {
  switch (mode) {
    case SamplerMode::kFloat: return "float";
    case SamplerMode::kBinary: return "binary";
    case SamplerMode::kTernary: return "ternary";
  }
  return "unknown";
}

std::size_t Mask::zero_count() const {
  std::size_t zeros = 0;
  for (auto v : values) zeros += v == 0 ? 1 : 0;
  return zeros;
}

template <typename T>
std::vector<T> binarize(std::span<const T> values) {
  std::vector<T> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = binarize(values[i]);
  return out;
}

template <typename T>
SteGradients<T> ste_backward(SamplerMode mode, std::span<const T> latent, const Mask* mask,
                             std::span<const T> effective_grad) {
  if (latent.size() != effective_grad.size()) {
    throw ShapeError("ste_backward: gradient has " + std::to_string(effective_grad.size()) +
                     " elements, latent has " + std::to_string(latent.size()));
  }
  SteGradients<T> out;
  out.latent.assign(effective_grad.begin(), effective_grad.end());
  if (mode != SamplerMode::kTernary) return out;
  if (!mask || mask->values.size() != latent.size()) throw ShapeError("ste_backward: ternary mode needs a congruent mask");
  T alpha_grad = 0;
  for (std::size_t i = 0; i < latent.size(); ++i) {
    if (mask->values[i] == 0) {
      out.latent[i] = T(0);
    } else {
      alpha_grad += binarize(latent[i]) * effective_grad[i];
    }
  }
  out.alpha = alpha_grad;
  return out;
}

void validate_sample_extents(std::int64_t height, std::int64_t width, std::int64_t block_size) {
  if (height < block_size || width < block_size) {
    throw InputSizeError("image " + std::to_string(height) + "x" + std::to_string(width) +
                         " is smaller than the block size " + std::to_string(block_size) +
                         "; no output can be obtained");
  }
  if (height % block_size != 0 || width % block_size != 0) {
    throw InputSizeError("image " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not divisible by the block size " + std::to_string(block_size) +
                         "; crop it to " + std::to_string(height / block_size * block_size) + "x" +
                         std::to_string(width / block_size * block_size) + " first");
  }
}

template <typename T>
SamplingLayer<T>::SamplingLayer(const SamplerConfig& config, std::mt19937_64& rng) : config_(config) {
  config_.validate();
  const std::int64_t bs = config_.block_size;
  latent_ = Parameter<T>("sampler.latent", Shape{atp::out_channels(config_), config_.in_channels, bs, bs});
  init_uniform_fan_in(latent_, config_.in_channels * bs * bs, rng);
  alpha_ = Parameter<T>("sampler.alpha", Tensor<T>::scalar(T(1)));
}

template <typename T>
void SamplingLayer<T>::set_mode(SamplerMode mode) {
  if (mode == SamplerMode::kTernary) {
    if (!mask_) throw ConfigError("ternary mode requires a mask; call ternarize()");
  } else {
    mask_.reset();
  }
  mode_ = mode;
}

template <typename T>
void SamplingLayer<T>::ternarize(Mask mask) {
  if (mask.shape != latent_.shape() || static_cast<std::int64_t>(mask.values.size()) != latent_.value.numel()) {
    throw ShapeError("mask " + mask.shape.to_string() + " with " + std::to_string(mask.values.size()) +
                     " values does not match sampling weight " + latent_.shape().to_string());
  }
  for (auto v : mask.values) {
    if (v > 1) throw FormatError("mask values must be 0 or 1");
  }
  mask_ = std::move(mask);
  mode_ = SamplerMode::kTernary;
}

template <typename T>
T SamplingLayer<T>::init_alpha() {
  double total = 0;
  for (T v : latent_.value.data()) total += std::abs(static_cast<double>(v));
  const T mean = static_cast<T>(total / static_cast<double>(latent_.value.numel()));
  if (mean == T(0)) log_warning("init_alpha: latent sampling weight is all zero; alpha set to 0");
  alpha_.value.mutable_data()[0] = mean;
  return mean;
}

template <typename T>
void SamplingLayer<T>::clamp_latent() {
  for (T& v : latent_.value.mutable_data()) v = std::clamp(v, T(-1), T(1));
}

template <typename T>
std::vector<T> SamplingLayer<T>::effective_values() const {
  auto latent = latent_.value.data();
  switch (mode_) {
    case SamplerMode::kFloat:
      return {latent.begin(), latent.end()};
    case SamplerMode::kBinary:
      return binarize(latent);
    case SamplerMode::kTernary: {
      const T a = alpha_.value.item();
      std::vector<T> out(latent.size());
      for (std::size_t i = 0; i < latent.size(); ++i) {
        out[i] = mask_->values[i] ? a * binarize(latent[i]) : T(0);
      }
      return out;
    }
  }
  return {};
}

template <typename T>
Tensor<T> SamplingLayer<T>::effective_weight() const {
  if (mode_ == SamplerMode::kFloat) return latent_.value;
  std::vector<Tensor<T>> inputs{latent_.value};
  if (mode_ == SamplerMode::kTernary) inputs.push_back(alpha_.value);
  const SamplerMode mode = mode_;
  const Mask* mask = mask_ ? &*mask_ : nullptr;
  // The mask is copied so the graph stays valid if the layer is re-masked.
  return make_op_result<T>(latent_.shape(), effective_values(), inputs,
                           [mode, mask_copy = mask ? std::optional<Mask>(*mask) : std::nullopt](detail::Node<T>& self) {
    auto& latent = *self.parents[0];
    SteGradients<T> g = ste_backward<T>(mode, latent.data, mask_copy ? &*mask_copy : nullptr, self.grad);
    if (latent.requires_grad) {
      T* dst = latent.grad_buffer().data();
      for (std::size_t i = 0; i < g.latent.size(); ++i) dst[i] += g.latent[i];
    }
    if (self.parents.size() > 1 && self.parents[1]->requires_grad) self.parents[1]->grad_buffer()[0] += g.alpha;
  });
}

template <typename T>
Tensor<T> SamplingLayer<T>::sample(const Tensor<T>& image) const {
  const Shape& s = image.shape();
  if (s.c() != config_.in_channels) {
    throw ShapeError("sample: image has " + std::to_string(s.c()) + " channels, sampler expects " +
                     std::to_string(config_.in_channels));
  }
  validate_sample_extents(s.h(), s.w(), config_.block_size);
  Conv2dOptions options;
  options.stride = {config_.block_size, config_.block_size};
  return conv2d<T>(image, effective_weight(), std::nullopt, options);
}

template <typename T>
std::vector<Parameter<T>*> SamplingLayer<T>::trainable_parameters() {
  if (mode_ == SamplerMode::kTernary) return {&latent_, &alpha_};
  return {&latent_};
}

template class SamplingLayer<float>;
template class SamplingLayer<double>;
template std::vector<float> binarize(std::span<const float>);
template std::vector<double> binarize(std::span<const double>);
template SteGradients<float> ste_backward(SamplerMode, std::span<const float>, const Mask*, std::span<const float>);
template SteGradients<double> ste_backward(SamplerMode, std::span<const double>, const Mask*, std::span<const double>);

}  // namespace atp
