#include "atpnet/optim.hpp"

#include <cmath>

#include "atpnet/errors.hpp"

namespace atp {

template <typename T>
Parameter<T>::Parameter(std::string name, Shape shape) : Parameter(std::move(name), Tensor<T>(shape)) {}

template <typename T>
Parameter<T>::Parameter(std::string name, Tensor<T> initial)
    : name(std::move(name)),
      value(std::move(initial)),
      first_moment(static_cast<std::size_t>(value.numel()), T(0)),
      second_moment(static_cast<std::size_t>(value.numel()), T(0)) {
  value.set_requires_grad(true);
}

template <typename T>
Parameter<T>::Parameter(const Parameter& other)
    : name(other.name),
      value(other.value.detach()),
      first_moment(other.first_moment),
      second_moment(other.second_moment),
      step(other.step) {
  value.set_requires_grad(true);
}

template <typename T>
Parameter<T>& Parameter<T>::operator=(const Parameter& other) {
  if (this != &other) *this = Parameter(other);
  return *this;
}

template <typename T>
void Parameter<T>::reset_optimizer_state() {
  std::fill(first_moment.begin(), first_moment.end(), T(0));
  std::fill(second_moment.begin(), second_moment.end(), T(0));
  step = 0;
}

template <typename T>
void adam_step(std::span<Parameter<T>* const> params, const AdamOptions& options) {
  for (Parameter<T>* p : params) {
    if (!p->value.has_grad()) throw TrainingError("adam_step: parameter '" + p->name + "' has no gradient");
  }
  for (Parameter<T>* p : params) {
    ++p->step;
    const double correction1 = 1.0 - std::pow(options.beta1, static_cast<double>(p->step));
    const double correction2 = 1.0 - std::pow(options.beta2, static_cast<double>(p->step));
    const T b1 = static_cast<T>(options.beta1);
    const T b2 = static_cast<T>(options.beta2);
    const T step_size = static_cast<T>(options.lr / correction1);
    const T root_correction2 = static_cast<T>(std::sqrt(correction2));
    const T eps = static_cast<T>(options.eps);
    auto grad = p->value.grad();
    auto values = p->value.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T g = grad[i];
      p->first_moment[i] = b1 * p->first_moment[i] + (T(1) - b1) * g;
      p->second_moment[i] = b2 * p->second_moment[i] + (T(1) - b2) * g * g;
      const T denom = std::sqrt(p->second_moment[i]) / root_correction2 + eps;
      values[i] -= step_size * p->first_moment[i] / denom;
    }
  }
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  const double unit = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * unit;
}

template <typename T>
void init_uniform_fan_in(Parameter<T>& param, std::int64_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (T& v : param.value.mutable_data()) v = static_cast<T>(uniform(rng, -bound, bound));
}

template struct Parameter<float>;
template struct Parameter<double>;
template void adam_step(std::span<Parameter<float>* const>, const AdamOptions&);
template void adam_step(std::span<Parameter<double>* const>, const AdamOptions&);
template void init_uniform_fan_in(Parameter<float>&, std::int64_t, std::mt19937_64&);
template void init_uniform_fan_in(Parameter<double>&, std::int64_t, std::mt19937_64&);

}  // namespace atp
