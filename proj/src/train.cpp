#include "atpnet/train.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "atpnet/binary_io.hpp"
#include "atpnet/errors.hpp"
#include "atpnet/log.hpp"
#include "atpnet/ops.hpp"
#include "atpnet/optim.hpp"

namespace atp {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(mr > 0 && mr <= 1)) throw ConfigError("mr must lie in (0, 1], got " + std::to_string(mr));
  if (block_size < 1) throw ConfigError("block_size must be positive");
  if (crop < block_size || crop % block_size != 0) {
    throw ConfigError("crop " + std::to_string(crop) + " must be a positive multiple of block_size " +
                      std::to_string(block_size));
  }
  if (batch < 1) throw ConfigError("batch must be positive");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(lr_decay_factor > 0 && lr_decay_factor <= 1)) throw ConfigError("lr decay factor must lie in (0, 1]");
  if (lr_decay_every < 1) throw ConfigError("lr decay interval must be positive");
  if (!(flip_prob >= 0 && flip_prob <= 1)) throw ConfigError("flip_prob must lie in [0, 1]");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (resolved_warmup() < 0 || resolved_warmup() > epochs) {
    throw ConfigError("warmup_epochs must lie in [0, epochs], got " + std::to_string(resolved_warmup()));
  }
  if (!(sparsity_rate >= 0 && sparsity_rate < 1)) {
    throw ConfigError("sparsity_rate must lie in [0, 1), got " + std::to_string(sparsity_rate));
  }
  if (calibration.crops < 1 || calibration.steps < 0 || !(calibration.lr > 0)) {
    throw ConfigError("calibration needs at least one crop, non-negative steps and a positive lr");
  }
  model_config(*this).validate();
}

ModelConfig model_config(const TrainConfig& config) {
  ModelConfig model;
  model.sampler.block_size = config.block_size;
  model.sampler.subrate = config.mr;
  model.sampler.in_channels = 1;
  model.deep = config.model;
  return model;
}

double learning_rate(const TrainConfig& config, std::int64_t epoch) {
  return config.lr * std::pow(config.lr_decay_factor, static_cast<double>(epoch / config.lr_decay_every));
}

std::string to_json(const TrainConfig& config) {
  json j;
  j["mr"] = config.mr;
  j["block_size"] = config.block_size;
  j["crop"] = config.crop;
  j["batch"] = config.batch;
  j["lr"] = config.lr;
  j["lr_decay"] = {{"factor", config.lr_decay_factor}, {"every", config.lr_decay_every}};
  j["flip_prob"] = config.flip_prob;
  j["epochs"] = config.epochs;
  j["warmup_epochs"] = config.resolved_warmup();
  j["sparsity_rate"] = config.sparsity_rate;
  j["seed"] = config.seed;
  j["calibration"] = {{"crops", config.calibration.crops}, {"steps", config.calibration.steps},
                      {"lr", config.calibration.lr}};
  j["model"] = {{"features", config.model.features},
                {"blocks", config.model.blocks},
                {"dilations", config.model.dilations},
                {"beta", config.model.beta},
                {"slope", config.model.slope}};
  return j.dump();
}

namespace {

void reject_unknown(const json& object, std::initializer_list<const char*> known, const std::string& where) {
  if (!object.is_object()) throw ConfigError(where + " must be a JSON object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, value] : object.items()) {
    if (!allowed.contains(key)) throw ConfigError("unknown configuration key '" + where + key + "'");
  }
}

template <typename V>
void read(const json& object, const char* key, V& target, const std::string& where) {
  if (!object.contains(key)) return;
  try {
    target = object.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError("configuration key '" + where + key + "' has the wrong type");
  }
}

}  // namespace

TrainConfig train_config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed configuration JSON: ") + e.what());
  }
  reject_unknown(j,
                 {"mr", "block_size", "crop", "batch", "lr", "lr_decay", "flip_prob", "epochs", "warmup_epochs",
                  "sparsity_rate", "seed", "calibration", "model"},
                 "");
  TrainConfig config;
  read(j, "mr", config.mr, "");
  read(j, "block_size", config.block_size, "");
  read(j, "crop", config.crop, "");
  read(j, "batch", config.batch, "");
  read(j, "lr", config.lr, "");
  read(j, "flip_prob", config.flip_prob, "");
  read(j, "epochs", config.epochs, "");
  read(j, "sparsity_rate", config.sparsity_rate, "");
  read(j, "seed", config.seed, "");
  if (j.contains("warmup_epochs")) {
    std::int64_t warmup = 0;
    read(j, "warmup_epochs", warmup, "");
    config.warmup_epochs = warmup;
  }
  if (j.contains("lr_decay")) {
    const json& d = j["lr_decay"];
    reject_unknown(d, {"factor", "every"}, "lr_decay.");
    read(d, "factor", config.lr_decay_factor, "lr_decay.");
    read(d, "every", config.lr_decay_every, "lr_decay.");
  }
  if (j.contains("calibration")) {
    const json& c = j["calibration"];
    reject_unknown(c, {"crops", "steps", "lr"}, "calibration.");
    read(c, "crops", config.calibration.crops, "calibration.");
    read(c, "steps", config.calibration.steps, "calibration.");
    read(c, "lr", config.calibration.lr, "calibration.");
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown(m, {"features", "blocks", "dilations", "beta", "slope"}, "model.");
    read(m, "features", config.model.features, "model.");
    read(m, "blocks", config.model.blocks, "model.");
    read(m, "dilations", config.model.dilations, "model.");
    read(m, "beta", config.model.beta, "model.");
    read(m, "slope", config.model.slope, "model.");
  }
  config.validate();
  return config;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  return train_config_from_json(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

namespace {

void write_floats(ByteWriter& out, std::span<const float> values) {
  for (float v : values) out.f32(v);
}

std::vector<float> read_floats(ByteReader& in, std::size_t count) {
  std::vector<float> values(count);
  for (float& v : values) v = in.f32();
  return values;
}

void write_shape(ByteWriter& out, const Shape& shape) {
  for (std::int64_t d : shape.dims) out.u32(static_cast<std::uint32_t>(d));
}

Shape read_shape(ByteReader& in) {
  Shape shape;
  for (auto& d : shape.dims) d = in.u32();
  return shape;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint) {
  ByteWriter out;
  out.magic("ATPN");
  out.u32(kCheckpointFormatVersion);
  out.str(to_json(checkpoint.config));
  out.u64(static_cast<std::uint64_t>(checkpoint.epoch));
  out.u8(static_cast<std::uint8_t>(checkpoint.mode));
  out.u8(checkpoint.attention_in_path ? 1 : 0);
  out.u8(checkpoint.mask ? 1 : 0);
  if (checkpoint.mask) {
    write_shape(out, checkpoint.mask->shape);
    out.raw(checkpoint.mask->values);
  }
  out.str(checkpoint.rng_state);
  out.u32(static_cast<std::uint32_t>(checkpoint.history.size()));
  for (const EpochStats& e : checkpoint.history) {
    out.u64(static_cast<std::uint64_t>(e.epoch));
    out.f64(e.lr);
    out.f64(e.train_mse);
    out.f64(e.val_mse);
  }
  out.u32(static_cast<std::uint32_t>(checkpoint.parameters.size()));
  for (const ParameterRecord& p : checkpoint.parameters) {
    out.str(p.name);
    write_shape(out, p.shape);
    out.u64(p.step);
    write_floats(out, p.value);
    write_floats(out, p.first_moment);
    write_floats(out, p.second_moment);
  }
  return out.take();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes, "checkpoint");
  in.expect_magic("ATPN");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointFormatVersion) {
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  }
  Checkpoint checkpoint;
  try {
    checkpoint.config = train_config_from_json(in.str());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: embedded configuration is invalid: ") + e.what());
  }
  checkpoint.epoch = static_cast<std::int64_t>(in.u64());
  const std::uint8_t mode = in.u8();
  if (mode > static_cast<std::uint8_t>(SamplerMode::kTernary)) throw FormatError("checkpoint: unknown sampler mode");
  checkpoint.mode = static_cast<SamplerMode>(mode);
  checkpoint.attention_in_path = in.u8() != 0;
  if (in.u8() != 0) {
    Mask mask;
    mask.shape = read_shape(in);
    const auto raw = in.raw(static_cast<std::size_t>(mask.shape.numel()));
    mask.values.assign(raw.begin(), raw.end());
    checkpoint.mask = std::move(mask);
  }
  if ((checkpoint.mode == SamplerMode::kTernary) != checkpoint.mask.has_value()) {
    throw FormatError("checkpoint: a mask is stored exactly when the sampler is ternary");
  }
  checkpoint.rng_state = in.str();
  const std::uint32_t epochs = in.u32();
  for (std::uint32_t i = 0; i < epochs; ++i) {
    EpochStats e;
    e.epoch = static_cast<std::int64_t>(in.u64());
    e.lr = in.f64();
    e.train_mse = in.f64();
    e.val_mse = in.f64();
    checkpoint.history.push_back(e);
  }
  const std::uint32_t count = in.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    ParameterRecord p;
    p.name = in.str();
    p.shape = read_shape(in);
    p.step = in.u64();
    const auto n = static_cast<std::size_t>(p.shape.numel());
    if (n * 12 > in.remaining()) throw FormatError("checkpoint: truncated parameter '" + p.name + "'");
    p.value = read_floats(in, n);
    p.first_moment = read_floats(in, n);
    p.second_moment = read_floats(in, n);
    checkpoint.parameters.push_back(std::move(p));
  }
  if (in.remaining() != 0) throw FormatError("checkpoint: " + std::to_string(in.remaining()) + " trailing bytes");
  return checkpoint;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_file(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

Checkpoint capture(const TrainConfig& config, AtpNet<float>& model, std::int64_t epoch, const std::mt19937_64& rng,
                   const std::vector<EpochStats>& history) {
  Checkpoint checkpoint;
  checkpoint.config = config;
  checkpoint.config.warmup_epochs = config.resolved_warmup();
  checkpoint.epoch = epoch;
  checkpoint.mode = model.sampler.mode();
  checkpoint.attention_in_path = model.attention_in_path;
  checkpoint.mask = model.sampler.mask();
  std::ostringstream state;
  state << rng;
  checkpoint.rng_state = state.str();
  checkpoint.history = history;
  for (const Parameter<float>* p : model.parameters()) {
    const auto values = p->value.data();
    checkpoint.parameters.push_back(
        {p->name, p->shape(), p->step, {values.begin(), values.end()}, p->first_moment, p->second_moment});
  }
  return checkpoint;
}

AtpNet<float> restore_model(const Checkpoint& checkpoint) {
  std::mt19937_64 scratch(0);
  AtpNet<float> model(model_config(checkpoint.config), scratch);
  std::map<std::string, const ParameterRecord*> records;
  for (const ParameterRecord& r : checkpoint.parameters) {
    if (!records.emplace(r.name, &r).second) throw FormatError("checkpoint: duplicate parameter '" + r.name + "'");
  }
  for (Parameter<float>* p : model.parameters()) {
    const auto it = records.find(p->name);
    if (it == records.end()) throw FormatError("checkpoint: missing parameter '" + p->name + "'");
    const ParameterRecord& r = *it->second;
    if (r.shape != p->shape()) {
      throw FormatError("checkpoint: parameter '" + r.name + "' has shape " + r.shape.to_string() + ", expected " +
                        p->shape().to_string());
    }
    std::copy(r.value.begin(), r.value.end(), p->value.mutable_data().begin());
    p->first_moment = r.first_moment;
    p->second_moment = r.second_moment;
    p->step = r.step;
    records.erase(it);
  }
  if (!records.empty()) throw FormatError("checkpoint: unexpected parameter '" + records.begin()->first + "'");
  if (checkpoint.mode == SamplerMode::kTernary) {
    model.sampler.ternarize(*checkpoint.mask);
  } else {
    model.sampler.set_mode(checkpoint.mode);
  }
  model.attention_in_path = checkpoint.attention_in_path;
  return model;
}

namespace {

std::int64_t draw_below(std::mt19937_64& rng, std::int64_t count) {
  return std::min(count - 1, static_cast<std::int64_t>(uniform(rng, 0.0, 1.0) * static_cast<double>(count)));
}

// Fisher-Yates with the portable uniform draw.
std::vector<std::size_t> shuffled_indices(std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = count; i > 1; --i) {
    const auto j = static_cast<std::size_t>(draw_below(rng, static_cast<std::int64_t>(i)));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

AugmentOptions augment_options(const TrainConfig& config) { return {config.crop, config.flip_prob}; }

}  // namespace

Tensor<float> calibration_batch(std::span<const Image> images, const TrainConfig& config, std::mt19937_64& rng) {
  if (images.empty()) throw TrainingError("calibration needs at least one training image");
  std::vector<Image> crops;
  crops.reserve(static_cast<std::size_t>(config.calibration.crops));
  for (std::int64_t i = 0; i < config.calibration.crops; ++i) {
    const Image& source = images[static_cast<std::size_t>(draw_below(rng, static_cast<std::int64_t>(images.size())))];
    crops.push_back(augment_image(source, augment_options(config), rng));
  }
  return to_tensor(crops);
}

Trainer::Trainer(TrainConfig config, std::vector<Image> train, std::vector<Image> val)
    : config_(std::move(config)), train_(std::move(train)), val_(std::move(val)) {
  config_.validate();
  config_.warmup_epochs = config_.resolved_warmup();
  filter_images();
  rng_.seed(config_.seed);
  model_ = AtpNet<float>(model_config(config_), rng_);
  last_good_ = checkpoint();
}

Trainer::Trainer(const Checkpoint& checkpoint, std::vector<Image> train, std::vector<Image> val)
    : config_(checkpoint.config), train_(std::move(train)), val_(std::move(val)) {
  config_.validate();
  filter_images();
  model_ = restore_model(checkpoint);
  std::istringstream state(checkpoint.rng_state);
  state >> rng_;
  if (state.fail()) throw FormatError("checkpoint: unreadable RNG state");
  epoch_ = checkpoint.epoch;
  history_ = checkpoint.history;
  last_good_ = checkpoint;
}

void Trainer::filter_images() {
  std::vector<Image> usable;
  for (Image& image : train_) {
    if (image.width < config_.crop || image.height < config_.crop) {
      log_warning("skipping " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                  " training image smaller than the " + std::to_string(config_.crop) + " crop");
      continue;
    }
    usable.push_back(std::move(image));
  }
  if (usable.empty()) throw TrainingError("no usable training images (need at least one of " +
                                          std::to_string(config_.crop) + "x" + std::to_string(config_.crop) + ")");
  train_ = std::move(usable);
  std::vector<Image> checked;
  for (const Image& image : val_) {
    if (image.width < config_.block_size || image.height < config_.block_size) {
      log_warning("skipping validation image smaller than one block");
      continue;
    }
    checked.push_back(validate_input_size(image, config_.block_size));
  }
  val_ = std::move(checked);
}

Checkpoint Trainer::checkpoint() { return capture(config_, model_, epoch_, rng_, history_); }

double Trainer::validation_mse() {
  if (val_.empty()) return std::numeric_limits<double>::quiet_NaN();
  NoGradGuard no_grad;
  double total = 0;
  for (const Image& image : val_) {
    const Tensor<float> x = to_tensor(image);
    total += static_cast<double>(mse_loss<float>(model_.forward(x), x).item());
  }
  return total / static_cast<double>(val_.size());
}

const EpochStats& Trainer::run_epoch() {
  if (finished()) throw TrainingError("training already completed " + std::to_string(config_.epochs) + " epochs");
  last_good_ = checkpoint();
  if (epoch_ == config_.resolved_warmup() && model_.sampler.mode() != SamplerMode::kTernary) {
    const Tensor<float> calibration = calibration_batch(train_, config_, rng_);
    BoundaryOptions options;
    options.sparsity_rate = config_.sparsity_rate;
    options.fit.steps = config_.calibration.steps;
    options.fit.lr = config_.calibration.lr;
    boundary_ = apply_phase_boundary(model_, calibration, options);
  }

  AdamOptions adam;
  adam.lr = learning_rate(config_, epoch_);
  const std::vector<std::size_t> order = shuffled_indices(train_.size(), rng_);
  const auto batch = static_cast<std::size_t>(config_.batch);
  double total = 0;
  for (std::size_t start = 0; start < order.size(); start += batch) {
    std::vector<Image> crops;
    for (std::size_t i = start; i < std::min(order.size(), start + batch); ++i) {
      crops.push_back(augment_image(train_[order[i]], augment_options(config_), rng_));
    }
    const Tensor<float> x = to_tensor(crops);
    std::vector<Parameter<float>*> params = model_.trainable_parameters();
    for (Parameter<float>* p : params) p->zero_grad();
    const Tensor<float> loss = mse_loss<float>(model_.forward(x), x);
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) {
      throw TrainingError("non-finite training loss in epoch " + std::to_string(epoch_) +
                          "; the last good checkpoint is from the start of this epoch");
    }
    backward(loss);
    adam_step<float>(params, adam);
    if (model_.sampler.mode() != SamplerMode::kFloat) model_.sampler.clamp_latent();
    total += value * static_cast<double>(crops.size());
  }
  EpochStats stats;
  stats.epoch = epoch_;
  stats.lr = adam.lr;
  stats.train_mse = total / static_cast<double>(order.size());
  stats.val_mse = validation_mse();
  history_.push_back(stats);
  ++epoch_;
  log_info("epoch " + std::to_string(stats.epoch + 1) + "/" + std::to_string(config_.epochs) + " [" +
           to_string(model_.sampler.mode()) + "] lr " + std::to_string(stats.lr) + " train mse " +
           std::to_string(stats.train_mse) + " val mse " + std::to_string(stats.val_mse));
  return history_.back();
}

void Trainer::run() {
  while (!finished()) run_epoch();
}

}  // namespace atp
