#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "atpnet/image.hpp"
#include "atpnet/model.hpp"

namespace atp {

struct CalibrationConfig {
  std::int64_t crops = 32;
  int steps = 500;
  double lr = 1e-3;
};

struct TrainConfig {
  double mr = 0.25;
  std::int64_t block_size = 32;
  std::int64_t crop = 96;
  std::int64_t batch = 32;
  double lr = 1e-4;
  double lr_decay_factor = 0.1;
  std::int64_t lr_decay_every = 100;
  double flip_prob = 0.5;
  std::int64_t epochs = 200;
  // Epochs of float training before ternarization; unset means epochs / 2.
  std::optional<std::int64_t> warmup_epochs;
  double sparsity_rate = 1.0 / 3.0;
  std::uint64_t seed = 0;
  CalibrationConfig calibration;
  ReconstructionConfig model;

  std::int64_t resolved_warmup() const { return warmup_epochs.value_or(epochs / 2); }
  // Throws ConfigError naming the first violated constraint.
  void validate() const;
};

ModelConfig model_config(const TrainConfig& config);

// lr0 * factor^floor(epoch / every)
double learning_rate(const TrainConfig& config, std::int64_t epoch);

// Every field is written, with the warm-up resolved.
std::string to_json(const TrainConfig& config);
// Missing keys keep their defaults; unknown keys raise ConfigError.
TrainConfig train_config_from_json(std::string_view text);
TrainConfig load_train_config(const std::filesystem::path& path);

struct EpochStats {
  std::int64_t epoch = 0;
  double lr = 0;
  double train_mse = 0;
  // NaN without a validation set.
  double val_mse = 0;
};

struct ParameterRecord {
  std::string name;
  Shape shape;
  std::uint64_t step = 0;
  std::vector<float> value;
  std::vector<float> first_moment;
  std::vector<float> second_moment;
};

struct Checkpoint {
  TrainConfig config;
  // Completed epochs.
  std::int64_t epoch = 0;
  SamplerMode mode = SamplerMode::kFloat;
  bool attention_in_path = true;
  std::optional<Mask> mask;
  // Textual mt19937_64 state.
  std::string rng_state;
  std::vector<ParameterRecord> parameters;
  std::vector<EpochStats> history;
};

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

// "ATPN" | u32 version | str config JSON | u64 epoch | u8 mode | u8 attention |
// u8 has_mask [4 x u32 shape, mask bytes] | str rng | u32 history count, then
// (u64 epoch, f64 lr, f64 train, f64 val) each | u32 parameter count, then per
// parameter: str name, 4 x u32 shape, u64 step, value, m, v as f32 arrays.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint capture(const TrainConfig& config, AtpNet<float>& model, std::int64_t epoch, const std::mt19937_64& rng,
                   const std::vector<EpochStats>& history);
// Rebuilds the network from a checkpoint; parameters are matched by name.
AtpNet<float> restore_model(const Checkpoint& checkpoint);

// Draws a batch of augmented crops, cycling through randomly chosen images.
Tensor<float> calibration_batch(std::span<const Image> images, const TrainConfig& config, std::mt19937_64& rng);

// Single-threaded, seed-deterministic training with float warm-up, the
// phase boundary at epoch resolved_warmup(), and ternary fine-tuning.
class Trainer {
 public:
  Trainer(TrainConfig config, std::vector<Image> train, std::vector<Image> val = {});
  Trainer(const Checkpoint& checkpoint, std::vector<Image> train, std::vector<Image> val = {});

  const TrainConfig& config() const { return config_; }
  std::int64_t epoch() const { return epoch_; }
  bool finished() const { return epoch_ >= config_.epochs; }
  AtpNet<float>& model() { return model_; }
  const std::vector<EpochStats>& history() const { return history_; }
  const std::optional<BoundaryReport>& boundary() const { return boundary_; }

  // Runs the phase boundary first when this epoch starts phase two.
  const EpochStats& run_epoch();
  void run();

  Checkpoint checkpoint();
  // State at the start of the most recent epoch; valid after a failure.
  const Checkpoint& last_good() const { return last_good_; }

 private:
  void filter_images();
  double validation_mse();

  TrainConfig config_;
  std::vector<Image> train_;
  std::vector<Image> val_;
  AtpNet<float> model_;
  std::mt19937_64 rng_;
  std::int64_t epoch_ = 0;
  std::vector<EpochStats> history_;
  std::optional<BoundaryReport> boundary_;
  Checkpoint last_good_;
};

}  // namespace atp
