#include "atpnet/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "atpnet/errors.hpp"
#include "atpnet/log.hpp"
#include "atpnet/ops.hpp"

namespace atp {

namespace {

// Below this, |Y| ranks reflect rounding noise rather than attention.
constexpr double kDegenerateImportance = 1e-6;

}  // namespace

template <typename T>
AttentionHead<T>::AttentionHead(std::int64_t channels, std::mt19937_64& rng) {
  const std::int64_t key_channels = std::max<std::int64_t>(1, channels / 8);
  query_weight = Parameter<T>("attention.query.weight", Shape{key_channels, channels, 1, 1});
  query_bias = Parameter<T>("attention.query.bias", Shape{1, key_channels, 1, 1});
  key_weight = Parameter<T>("attention.key.weight", Shape{key_channels, channels, 1, 1});
  key_bias = Parameter<T>("attention.key.bias", Shape{1, key_channels, 1, 1});
  value_weight = Parameter<T>("attention.value.weight", Shape{channels, channels, 1, 1});
  value_bias = Parameter<T>("attention.value.bias", Shape{1, channels, 1, 1});
  gamma = Parameter<T>("attention.gamma", Tensor<T>::scalar(T(0)));
  for (auto* p : {&query_weight, &query_bias, &key_weight, &key_bias, &value_weight, &value_bias}) {
    init_uniform_fan_in(*p, channels, rng);
  }
}

template <typename T>
Tensor<T> AttentionHead<T>::forward(const Tensor<T>& measurements) const {
  const Tensor<T> q = conv2d<T>(measurements, query_weight.value, query_bias.value);
  const Tensor<T> k = conv2d<T>(measurements, key_weight.value, key_bias.value);
  const Tensor<T> v = conv2d<T>(measurements, value_weight.value, value_bias.value);
  const Tensor<T> attended = spatial_attention<T>(q, k, v);
  return add<T>(measurements, scale_by<T>(attended, gamma.value));
}

template <typename T>
Tensor<T> AttentionHead<T>::affinity(const Tensor<T>& measurements) const {
  NoGradGuard no_grad;
  const Tensor<T> q = conv2d<T>(measurements, query_weight.value, query_bias.value);
  const Tensor<T> k = conv2d<T>(measurements, key_weight.value, key_bias.value);
  return attention_affinity<T>(q, k);
}

template <typename T>
std::vector<Parameter<T>*> AttentionHead<T>::parameters() {
  return {&query_weight, &query_bias, &key_weight, &key_bias, &value_weight, &value_bias, &gamma};
}

template <typename T>
AuxiliarySampler<T>::AuxiliarySampler(Shape weight_shape, std::span<const T> initial) {
  if (static_cast<std::int64_t>(initial.size()) != weight_shape.numel()) {
    throw ShapeError("auxiliary sampler: " + std::to_string(initial.size()) + " initial values for shape " +
                     weight_shape.to_string());
  }
  weight = Parameter<T>("aux.weight", Tensor<T>(weight_shape, std::vector<T>(initial.begin(), initial.end())));
}

template <typename T>
Tensor<T> AuxiliarySampler<T>::predict(const Tensor<T>& images) const {
  validate_sample_extents(images.shape().h(), images.shape().w(), block_size());
  Conv2dOptions options;
  options.stride = {block_size(), block_size()};
  return conv2d<T>(images, weight.value, std::nullopt, options);
}

template <typename T>
FitResult fit_auxiliary(AuxiliarySampler<T>& aux, const Tensor<T>& images, const Tensor<T>& targets,
                        const FitOptions& options) {
  if (options.steps < 0) throw ConfigError("fit_auxiliary: negative step count");
  const Tensor<T> fixed_images = images.detach();
  const Tensor<T> fixed_targets = targets.detach();
  {
    NoGradGuard no_grad;
    const Shape predicted = aux.predict(fixed_images).shape();
    if (predicted != fixed_targets.shape()) {
      throw ShapeError("fit_auxiliary: targets " + fixed_targets.shape().to_string() +
                       " do not match predictions " + predicted.to_string());
    }
  }

  FitResult result;
  Parameter<T>* params[] = {&aux.weight};
  AdamOptions adam;
  adam.lr = options.lr;
  int rising = 0;
  for (int step = 0; step <= options.steps; ++step) {
    aux.weight.zero_grad();
    const bool last = step == options.steps;
    Tensor<T> loss;
    if (last) {
      NoGradGuard no_grad;
      loss = mse_loss<T>(aux.predict(fixed_images), fixed_targets);
    } else {
      loss = mse_loss<T>(aux.predict(fixed_images), fixed_targets);
    }
    const double objective = static_cast<double>(loss.item());
    if (!std::isfinite(objective)) {
      throw TrainingError("fit_auxiliary: objective became non-finite at step " + std::to_string(step));
    }
    if (!result.trace.empty() && objective > result.trace.back()) {
      if (++rising >= options.divergence_patience && objective > result.trace.front()) {
        throw TrainingError("fit_auxiliary: objective increased for " + std::to_string(rising) +
                            " consecutive steps (diverging); lower the learning rate");
      }
    } else {
      rising = 0;
    }
    result.trace.push_back(objective);
    if (last) break;
    backward(loss);
    if (options.optimizer == FitOptions::Optimizer::kAdam) {
      adam_step<T>(params, adam);
    } else {
      auto grad = aux.weight.value.grad();
      auto values = aux.weight.value.mutable_data();
      const T lr = static_cast<T>(options.lr);
      for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * grad[i];
    }
  }
  aux.weight.zero_grad();
  result.initial_objective = result.trace.front();
  result.final_objective = result.trace.back();
  return result;
}

template <typename T>
ImportanceMap<T> importance(std::span<const T> fitted, std::span<const T> reference, Shape shape) {
  if (fitted.size() != reference.size() || static_cast<std::int64_t>(fitted.size()) != shape.numel()) {
    throw ShapeError("importance: operands of " + std::to_string(fitted.size()) + " and " +
                     std::to_string(reference.size()) + " elements for shape " + shape.to_string());
  }
  ImportanceMap<T> map{shape, std::vector<T>(fitted.size())};
  for (std::size_t i = 0; i < fitted.size(); ++i) map.values[i] = fitted[i] - reference[i];
  return map;
}

template <typename T>
ImportanceMap<T> importance(const AuxiliarySampler<T>& aux, const SamplingLayer<T>& sampler) {
  if (aux.weight.shape() != sampler.weight_shape()) {
    throw ShapeError("importance: auxiliary weight " + aux.weight.shape().to_string() +
                     " does not match sampling weight " + sampler.weight_shape().to_string());
  }
  const std::vector<T> reference = sampler.effective_values();
  return importance<T>(aux.weight.value.data(), reference, aux.weight.shape());
}

template <typename T>
Mask build_mask(std::span<const T> scores, Shape shape, double sparsity_rate) {
  if (!(sparsity_rate >= 0.0 && sparsity_rate < 1.0)) {
    throw ConfigError("sparsity rate must lie in [0, 1), got " + std::to_string(sparsity_rate));
  }
  if (static_cast<std::int64_t>(scores.size()) != shape.numel()) {
    throw ShapeError("build_mask: " + std::to_string(scores.size()) + " scores for shape " + shape.to_string());
  }
  for (T s : scores) {
    if (!std::isfinite(static_cast<double>(s))) throw ConfigError("build_mask: non-finite importance value");
  }
  const std::size_t pruned = static_cast<std::size_t>(std::llround(sparsity_rate * static_cast<double>(scores.size())));
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(scores[a]) < std::abs(scores[b]); });
  Mask mask{shape, std::vector<std::uint8_t>(scores.size(), 1)};
  for (std::size_t i = 0; i < pruned; ++i) mask.values[order[i]] = 0;
  return mask;
}

template <typename T>
Mask importance_mask(const ImportanceMap<T>& importance, std::span<const T> latent, double sparsity_rate) {
  double peak = 0;
  for (T v : importance.values) peak = std::max(peak, std::abs(static_cast<double>(v)));
  if (peak > kDegenerateImportance) return build_mask(importance, sparsity_rate);
  log_warning("importance map is numerically zero (max |Y| = " + std::to_string(peak) +
              "); falling back to magnitude pruning on the latent weight");
  return build_mask<T>(latent, importance.shape, sparsity_rate);
}

#define ATP_INSTANTIATE_ATTENTION(T)                                                                   \
  template class AttentionHead<T>;                                                                     \
  template class AuxiliarySampler<T>;                                                                  \
  template FitResult fit_auxiliary(AuxiliarySampler<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                   const FitOptions&);                                                 \
  template ImportanceMap<T> importance(std::span<const T>, std::span<const T>, Shape);                 \
  template ImportanceMap<T> importance(const AuxiliarySampler<T>&, const SamplingLayer<T>&);           \
  template Mask build_mask(std::span<const T>, Shape, double);                                         \
  template Mask importance_mask(const ImportanceMap<T>&, std::span<const T>, double);

ATP_INSTANTIATE_ATTENTION(float)
ATP_INSTANTIATE_ATTENTION(double)

}  // namespace atp
