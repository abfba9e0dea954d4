#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "atpnet/optim.hpp"
#include "atpnet/sampling.hpp"
#include "atpnet/tensor.hpp"

namespace atp {

// Single-head self-attention over the spatial positions of a measurement
// tensor, gated by a learnable residual scale gamma (initialized to 0):
//   y_atten = y + gamma * attention(y)
template <typename T>
class AttentionHead {
 public:
  AttentionHead() = default;
  AttentionHead(std::int64_t channels, std::mt19937_64& rng);

  std::int64_t channels() const { return value_weight.shape().n(); }
  std::int64_t key_channels() const { return query_weight.shape().n(); }

  Tensor<T> forward(const Tensor<T>& measurements) const;
  // Row-stochastic affinity matrices, (b, 1, N, N) with N = h * w.
  Tensor<T> affinity(const Tensor<T>& measurements) const;

  std::vector<Parameter<T>*> parameters();

  Parameter<T> query_weight, query_bias;
  Parameter<T> key_weight, key_bias;
  Parameter<T> value_weight, value_bias;
  Parameter<T> gamma;
};

// Convolutional stand-in for the attention output: a stride-bs filter bank
// congruent with the sampling weight, fitted so that aux (x) approximates y_atten.
template <typename T>
class AuxiliarySampler {
 public:
  AuxiliarySampler() = default;
  AuxiliarySampler(Shape weight_shape, std::span<const T> initial);

  std::int64_t block_size() const { return weight.shape().h(); }
  Tensor<T> predict(const Tensor<T>& images) const;

  Parameter<T> weight;
};

struct FitOptions {
  enum class Optimizer { kAdam, kGradientDescent };

  int steps = 500;
  double lr = 1e-3;
  Optimizer optimizer = Optimizer::kAdam;
  // Consecutive objective increases tolerated before declaring divergence;
  // only counts once the objective also exceeds its starting value.
  int divergence_patience = 10;
};

struct FitResult {
  double initial_objective = 0;
  double final_objective = 0;
  // Objective evaluated before every step, then once after the last.
  std::vector<double> trace;
};

// Minimizes mean((aux (x) images - targets)^2) over the auxiliary weight.
// Raises TrainingError on a non-finite objective or on divergence.
template <typename T>
FitResult fit_auxiliary(AuxiliarySampler<T>& aux, const Tensor<T>& images, const Tensor<T>& targets,
                        const FitOptions& options);

template <typename T>
struct ImportanceMap {
  Shape shape;
  std::vector<T> values;
};

// Y = fitted - reference, elementwise.
template <typename T>
ImportanceMap<T> importance(std::span<const T> fitted, std::span<const T> reference, Shape shape);

// Y = aux weight - the sampler's current effective weight.
template <typename T>
ImportanceMap<T> importance(const AuxiliarySampler<T>& aux, const SamplingLayer<T>& sampler);

// Zeros the round(rate * N) entries with smallest |score|; ties go to the
// lowest flat index first. rate must lie in [0, 1).
template <typename T>
Mask build_mask(std::span<const T> scores, Shape shape, double sparsity_rate);

template <typename T>
Mask build_mask(const ImportanceMap<T>& importance, double sparsity_rate) {
  return build_mask<T>(importance.values, importance.shape, sparsity_rate);
}

// Mask from the importance map, falling back to magnitude pruning on the
// latent weight (with a warning) when the map carries no ranking signal.
template <typename T>
Mask importance_mask(const ImportanceMap<T>& importance, std::span<const T> latent, double sparsity_rate);

}  // namespace atp
