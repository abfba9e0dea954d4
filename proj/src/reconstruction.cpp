#include "atpnet/reconstruction.hpp"

#include <Eigen/Dense>
#include <numeric>

#include "atpnet/errors.hpp"
#include "atpnet/ops.hpp"

namespace atp {

template <typename T>
DepthwiseSeparable<T>::DepthwiseSeparable(const std::string& prefix, std::int64_t in_channels,
                                          std::int64_t out_channels, std::int64_t kernel, std::mt19937_64& rng)
    : depth(prefix + ".depth", Shape{in_channels, 1, kernel, kernel}),
      point(prefix + ".point", Shape{out_channels, in_channels, 1, 1}),
      bias(prefix + ".bias", Shape{1, out_channels, 1, 1}) {
  init_uniform_fan_in(depth, kernel * kernel, rng);
  init_uniform_fan_in(point, in_channels, rng);
  init_uniform_fan_in(bias, in_channels, rng);
}

template <typename T>
Tensor<T> DepthwiseSeparable<T>::forward(const Tensor<T>& input) const {
  const std::int64_t kernel = depth.shape().h();
  return depthwise_separable_conv<T>(input, depth.value, point.value, bias.value, kernel / 2, 1);
}

template <typename T>
InitialReconstructor<T>::InitialReconstructor(const SamplerConfig& config, std::mt19937_64& rng) : config_(config) {
  config_.validate();
  const std::int64_t pixels = config_.block_size * config_.block_size * config_.in_channels;
  const std::int64_t measurements = out_channels(config_);
  expand_weight = Parameter<T>("init.expand.weight", Shape{pixels, measurements, 1, 1});
  expand_bias = Parameter<T>("init.expand.bias", Shape{1, pixels, 1, 1});
  init_uniform_fan_in(expand_weight, measurements, rng);
  init_uniform_fan_in(expand_bias, measurements, rng);
  refine = DepthwiseSeparable<T>("init.refine", config_.in_channels, config_.in_channels, 3, rng);
  set_refine_identity();
}

template <typename T>
Tensor<T> InitialReconstructor<T>::forward(const Tensor<T>& measurements) const {
  const Shape& s = measurements.shape();
  if (s.c() != expand_weight.shape().c()) {
    throw ShapeError("init_reconstruct: measurements have " + std::to_string(s.c()) +
                     " channels, the sampler configuration produces " + std::to_string(expand_weight.shape().c()));
  }
  const Tensor<T> blocks = conv2d<T>(measurements, expand_weight.value, expand_bias.value);
  const Tensor<T> image = pixel_shuffle<T>(blocks, config_.block_size);
  return refine.forward(image);
}

template <typename T>
void InitialReconstructor<T>::set_refine_identity() {
  auto depth = refine.depth.value.mutable_data();
  std::fill(depth.begin(), depth.end(), T(0));
  const std::int64_t k = refine.depth.shape().h();
  const std::int64_t channels = refine.depth.shape().n();
  for (std::int64_t c = 0; c < channels; ++c) depth[static_cast<std::size_t>(c * k * k + (k / 2) * k + k / 2)] = T(1);
  auto point = refine.point.value.mutable_data();
  std::fill(point.begin(), point.end(), T(0));
  for (std::int64_t c = 0; c < channels; ++c) point[static_cast<std::size_t>(c * channels + c)] = T(1);
  auto bias = refine.bias.value.mutable_data();
  std::fill(bias.begin(), bias.end(), T(0));
}

template <typename T>
void InitialReconstructor<T>::set_linear_decoder(std::span<const T> decoder) {
  auto weight = expand_weight.value.mutable_data();
  if (decoder.size() != weight.size()) {
    throw ShapeError("set_linear_decoder: decoder has " + std::to_string(decoder.size()) + " entries, expected " +
                     std::to_string(weight.size()));
  }
  std::copy(decoder.begin(), decoder.end(), weight.begin());
  auto bias = expand_bias.value.mutable_data();
  std::fill(bias.begin(), bias.end(), T(0));
}

template <typename T>
std::vector<Parameter<T>*> InitialReconstructor<T>::parameters() {
  std::vector<Parameter<T>*> out{&expand_weight, &expand_bias};
  for (auto* p : refine.parameters()) out.push_back(p);
  return out;
}

std::vector<double> pseudo_inverse(std::span<const double> matrix, std::int64_t rows, std::int64_t cols) {
  if (static_cast<std::int64_t>(matrix.size()) != rows * cols) {
    throw ShapeError("pseudo_inverse: " + std::to_string(matrix.size()) + " entries for a " + std::to_string(rows) +
                     "x" + std::to_string(cols) + " matrix");
  }
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMatrix a = Eigen::Map<const RowMatrix>(matrix.data(), rows, cols);
  const RowMatrix pinv = a.completeOrthogonalDecomposition().pseudoInverse();
  return {pinv.data(), pinv.data() + pinv.size()};
}

void ReconstructionConfig::validate() const {
  if (features < 1) throw ConfigError("feature width must be >= 1");
  if (blocks < 0) throw ConfigError("block count must be >= 0");
  if (static_cast<std::int64_t>(dilations.size()) != blocks) {
    throw ConfigError("expected one dilation rate per base block (" + std::to_string(blocks) + "), got " +
                      std::to_string(dilations.size()));
  }
  for (std::size_t i = 0; i < dilations.size(); ++i) {
    if (dilations[i] < 1) throw ConfigError("dilation rates must be >= 1");
    if (i > 0 && std::gcd(dilations[i - 1], dilations[i]) > 1) {
      throw ConfigError("consecutive dilation rates " + std::to_string(dilations[i - 1]) + " and " +
                        std::to_string(dilations[i]) + " share a common divisor > 1 (gridding artifacts)");
    }
  }
  if (!(slope > 0.0 && slope < 1.0)) throw ConfigError("leaky ReLU slope must lie in (0, 1)");
}

template <typename T>
BaseBlock<T>::BaseBlock(const std::string& prefix, std::int64_t channels, T beta, T slope, std::mt19937_64& rng)
    : channels_(channels), beta_(beta), slope_(slope) {
  for (std::int64_t i = 0; i < 3; ++i) {
    layers.emplace_back(prefix + ".layer" + std::to_string(i), (i + 1) * channels, channels, 3, rng);
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::int64_t expected = static_cast<std::int64_t>(i + 1) * channels;
    if (layers[i].point.shape().c() != expected || layers[i].point.shape().n() != channels) {
      throw ShapeError("base block layer " + std::to_string(i) + " must map " + std::to_string(expected) + " -> " +
                       std::to_string(channels) + " channels");
    }
  }
}

template <typename T>
Tensor<T> BaseBlock<T>::forward(const Tensor<T>& x) const {
  if (x.shape().c() != channels_) {
    throw ShapeError("base block expects " + std::to_string(channels_) + " channels, got " + x.shape().to_string());
  }
  const Tensor<T> y1 = leaky_relu<T>(layers[0].forward(x), slope_);
  const Tensor<T> y2 = leaky_relu<T>(layers[1].forward(concat_channels<T>({y1, x})), slope_);
  const Tensor<T> y3 = leaky_relu<T>(layers[2].forward(concat_channels<T>({y2, y1, x})), slope_);
  return add<T>(y3, scale<T>(x, beta_));
}

template <typename T>
std::vector<Parameter<T>*> BaseBlock<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& layer : layers) {
    for (auto* p : layer.parameters()) out.push_back(p);
  }
  return out;
}

template <typename T>
DeepReconstructor<T>::DeepReconstructor(std::int64_t image_channels, const ReconstructionConfig& config,
                                        std::mt19937_64& rng)
    : config_(config) {
  config_.validate();
  const std::int64_t f = config_.features;
  head_weight = Parameter<T>("deep.head.weight", Shape{f, image_channels, 3, 3});
  head_bias = Parameter<T>("deep.head.bias", Shape{1, f, 1, 1});
  init_uniform_fan_in(head_weight, image_channels * 9, rng);
  init_uniform_fan_in(head_bias, image_channels * 9, rng);
  for (std::int64_t i = 0; i < config_.blocks; ++i) {
    const std::string stage = std::to_string(i);
    blocks.emplace_back("deep.block" + stage, f, static_cast<T>(config_.beta), static_cast<T>(config_.slope), rng);
    dilated_weights.emplace_back("deep.dilated" + stage + ".weight", Shape{f, f, 3, 3});
    dilated_biases.emplace_back("deep.dilated" + stage + ".bias", Shape{1, f, 1, 1});
    init_uniform_fan_in(dilated_weights.back(), f * 9, rng);
    init_uniform_fan_in(dilated_biases.back(), f * 9, rng);
  }
  tail_weight = Parameter<T>("deep.tail.weight", Shape{image_channels, f, 3, 3});
  tail_bias = Parameter<T>("deep.tail.bias", Shape{1, image_channels, 1, 1});
  init_uniform_fan_in(tail_weight, f * 9, rng);
  init_uniform_fan_in(tail_bias, f * 9, rng);
}

template <typename T>
Tensor<T> DeepReconstructor<T>::forward(const Tensor<T>& x_hat) const {
  if (x_hat.shape().c() != head_weight.shape().c()) {
    throw ShapeError("deep_reconstruct: expected " + std::to_string(head_weight.shape().c()) +
                     " image channels, got " + x_hat.shape().to_string());
  }
  const T slope = static_cast<T>(config_.slope);
  Conv2dOptions same;
  same.padding = {1, 1};
  const Tensor<T> features = leaky_relu<T>(conv2d<T>(x_hat, head_weight.value, head_bias.value, same), slope);
  Tensor<T> previous_base = features;
  Tensor<T> current = features;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const Tensor<T> base = leaky_relu<T>(add<T>(blocks[i].forward(current), previous_base), slope);
    const std::int64_t rate = config_.dilations[i];
    Conv2dOptions dilated;
    dilated.padding = {rate, rate};
    dilated.dilation = {rate, rate};
    current = leaky_relu<T>(conv2d<T>(base, dilated_weights[i].value, dilated_biases[i].value, dilated), slope);
    previous_base = base;
  }
  const Tensor<T> residual = conv2d<T>(current, tail_weight.value, tail_bias.value, same);
  return add<T>(residual, x_hat);
}

template <typename T>
std::vector<Parameter<T>*> DeepReconstructor<T>::parameters() {
  std::vector<Parameter<T>*> out{&head_weight, &head_bias};
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    for (auto* p : blocks[i].parameters()) out.push_back(p);
    out.push_back(&dilated_weights[i]);
    out.push_back(&dilated_biases[i]);
  }
  out.push_back(&tail_weight);
  out.push_back(&tail_bias);
  return out;
}

std::int64_t receptive_field(std::span<const LayerSpec> layers) {
  std::int64_t field = 1;
  std::int64_t jump = 1;
  for (const LayerSpec& layer : layers) {
    field += (layer.kernel - 1) * layer.dilation * jump;
    jump *= layer.stride;
  }
  return field;
}

std::vector<LayerSpec> deep_reconstructor_layers(const ReconstructionConfig& config) {
  std::vector<LayerSpec> layers{{3, 1, 1}};
  for (std::int64_t i = 0; i < config.blocks; ++i) {
    for (int k = 0; k < 3; ++k) layers.push_back({3, 1, 1});
    layers.push_back({3, config.dilations[static_cast<std::size_t>(i)], 1});
  }
  layers.push_back({3, 1, 1});
  return layers;
}

template struct DepthwiseSeparable<float>;
template struct DepthwiseSeparable<double>;
template class InitialReconstructor<float>;
template class InitialReconstructor<double>;
template class BaseBlock<float>;
template class BaseBlock<double>;
template class DeepReconstructor<float>;
template class DeepReconstructor<double>;

}  // namespace atp
