#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "atpnet/attention.hpp"
#include "atpnet/reconstruction.hpp"
#include "atpnet/sampling.hpp"
#include "atpnet/tensor.hpp"

namespace atp {

struct ModelConfig {
  SamplerConfig sampler;
  ReconstructionConfig deep;

  void validate() const;
};

// Full sampling and reconstruction network:
//   y = sample(x); y' = attention(y) while attention_in_path; x_hat = init(y'); out = deep(x_hat)
template <typename T>
class AtpNet {
 public:
  AtpNet() = default;
  AtpNet(const ModelConfig& config, std::mt19937_64& rng);

  const ModelConfig& config() const { return config_; }

  // Raw block measurements; attention never touches them.
  Tensor<T> measure(const Tensor<T>& image) const { return sampler.sample(image); }
  Tensor<T> initial_estimate(const Tensor<T>& measurements) const;
  Tensor<T> reconstruct(const Tensor<T>& measurements) const;
  Tensor<T> forward(const Tensor<T>& image) const { return reconstruct(measure(image)); }

  // Every parameter, in a fixed order that checkpoints rely on.
  std::vector<Parameter<T>*> parameters();
  // Parameters updated in the current phase.
  std::vector<Parameter<T>*> trainable_parameters();

  SamplingLayer<T> sampler;
  AttentionHead<T> attention;
  InitialReconstructor<T> initial;
  DeepReconstructor<T> deep;
  // True during float warm-up; the phase boundary freezes and detaches the head.
  bool attention_in_path = true;

 private:
  ModelConfig config_;
};

struct BoundaryOptions {
  double sparsity_rate = 1.0 / 3.0;
  FitOptions fit;
};

struct BoundaryReport {
  FitResult fit;
  double max_importance = 0;
  std::size_t pruned = 0;
  double alpha = 0;
};

// Float -> ternary transition: switch to binary weights, fit the auxiliary
// sampler to the attention output on the calibration batch, prune by
// importance, ternarize, initialize alpha, and drop attention from the path.
template <typename T>
BoundaryReport apply_phase_boundary(AtpNet<T>& model, const Tensor<T>& calibration, const BoundaryOptions& options);

}  // namespace atp
