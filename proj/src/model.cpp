#include "atpnet/model.hpp"

#include <algorithm>
#include <cmath>

#include "atpnet/errors.hpp"
#include "atpnet/log.hpp"

namespace atp {

void ModelConfig::validate() const {
  sampler.validate();
  deep.validate();
}

template <typename T>
AtpNet<T>::AtpNet(const ModelConfig& config, std::mt19937_64& rng) : config_(config) {
  config_.validate();
  sampler = SamplingLayer<T>(config_.sampler, rng);
  attention = AttentionHead<T>(sampler.out_channels(), rng);
  initial = InitialReconstructor<T>(config_.sampler, rng);
  deep = DeepReconstructor<T>(config_.sampler.in_channels, config_.deep, rng);
}

template <typename T>
Tensor<T> AtpNet<T>::initial_estimate(const Tensor<T>& measurements) const {
  return initial.forward(attention_in_path ? attention.forward(measurements) : measurements);
}

template <typename T>
Tensor<T> AtpNet<T>::reconstruct(const Tensor<T>& measurements) const {
  return deep.forward(initial_estimate(measurements));
}

template <typename T>
std::vector<Parameter<T>*> AtpNet<T>::parameters() {
  std::vector<Parameter<T>*> all{&sampler.latent(), &sampler.alpha()};
  const auto append = [&all](std::vector<Parameter<T>*> more) { all.insert(all.end(), more.begin(), more.end()); };
  append(attention.parameters());
  append(initial.parameters());
  append(deep.parameters());
  return all;
}

template <typename T>
std::vector<Parameter<T>*> AtpNet<T>::trainable_parameters() {
  std::vector<Parameter<T>*> out = sampler.trainable_parameters();
  const auto append = [&out](std::vector<Parameter<T>*> more) { out.insert(out.end(), more.begin(), more.end()); };
  if (attention_in_path) append(attention.parameters());
  append(initial.parameters());
  append(deep.parameters());
  return out;
}

template <typename T>
BoundaryReport apply_phase_boundary(AtpNet<T>& model, const Tensor<T>& calibration, const BoundaryOptions& options) {
  if (options.sparsity_rate < 0 || options.sparsity_rate >= 1) {
    throw ConfigError("sparsity_rate must lie in [0, 1), got " + std::to_string(options.sparsity_rate));
  }
  if (model.sampler.mode() == SamplerMode::kTernary) throw ConfigError("sampler is already ternary");
  model.sampler.set_mode(SamplerMode::kBinary);
  const std::vector<T> binary = model.sampler.effective_values();

  Tensor<T> targets;
  {
    NoGradGuard no_grad;
    targets = model.attention.forward(model.sampler.sample(calibration));
  }
  AuxiliarySampler<T> aux(model.sampler.weight_shape(), binary);
  BoundaryReport report;
  report.fit = fit_auxiliary(aux, calibration, targets, options.fit);

  const ImportanceMap<T> y = importance(aux, model.sampler);
  for (T v : y.values) report.max_importance = std::max(report.max_importance, std::abs(static_cast<double>(v)));
  Mask mask = importance_mask(y, model.sampler.latent().value.data(), options.sparsity_rate);
  report.pruned = mask.zero_count();
  model.sampler.ternarize(std::move(mask));
  report.alpha = static_cast<double>(model.sampler.init_alpha());
  model.attention_in_path = false;
  for (Parameter<T>* p : model.attention.parameters()) p->zero_grad();
  log_info("phase boundary: pruned " + std::to_string(report.pruned) + " of " +
           std::to_string(model.sampler.weight_shape().numel()) + " sampling weights, alpha = " +
           std::to_string(report.alpha) + ", auxiliary objective " + std::to_string(report.fit.initial_objective) +
           " -> " + std::to_string(report.fit.final_objective));
  return report;
}

template class AtpNet<float>;
template class AtpNet<double>;
template BoundaryReport apply_phase_boundary(AtpNet<float>&, const Tensor<float>&, const BoundaryOptions&);
template BoundaryReport apply_phase_boundary(AtpNet<double>&, const Tensor<double>&, const BoundaryOptions&);

}  // namespace atp
