#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "atpnet/tensor.hpp"

namespace atp {

// A named trainable leaf tensor plus its Adam moment estimates.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  std::vector<T> first_moment;
  std::vector<T> second_moment;
  std::uint64_t step = 0;

  Parameter() = default;
  Parameter(std::string name, Shape shape);
  Parameter(std::string name, Tensor<T> initial);

  // Copies own their values; gradients are not copied.
  Parameter(const Parameter& other);
  Parameter& operator=(const Parameter& other);
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  const Shape& shape() const { return value.shape(); }
  void zero_grad() { value.zero_grad(); }
  // Clears moments and the step counter.
  void reset_optimizer_state();
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam update. Every parameter must carry a gradient;
// a missing one raises TrainingError naming it.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, const AdamOptions& options);

// Deterministic uniform in [lo, hi) built from raw engine output, so
// initialization does not depend on the standard library's distributions.
double uniform(std::mt19937_64& rng, double lo, double hi);

// Fills with U(-bound, bound), bound = 1/sqrt(fan_in).
template <typename T>
void init_uniform_fan_in(Parameter<T>& param, std::int64_t fan_in, std::mt19937_64& rng);

}  // namespace atp
