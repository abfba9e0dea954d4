#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atpnet/image.hpp"
#include "atpnet/model.hpp"
#include "atpnet/ternary.hpp"

namespace atp {

// Size check, sampling, both reconstruction stages, clamp and 8-bit rounding.
// Returns the reconstruction of validate_input_size(image).
Image reconstruct_image(const AtpNet<float>& model, const Image& image);

struct EvalEntry {
  std::string name;
  std::int64_t width = 0;
  std::int64_t height = 0;
  double psnr = 0;  // +infinity for an exact reconstruction
};

struct EvalReport {
  std::vector<EvalEntry> entries;  // filename order
  double mean_psnr = 0;
  double mr = 0;
  std::string model_id;
  double seconds = 0;
};

struct EvalOptions {
  // Reconstructions are written here as <stem>.png when set.
  std::optional<std::filesystem::path> image_dir;
  // 0 picks evaluation_threads().
  std::size_t threads = 0;
};

// Worker count: ATPNET_THREADS when set to a positive integer, else the
// hardware concurrency (at least 1).
std::size_t evaluation_threads();

// Raises ConfigError when requested_mr differs from the model's rate.
EvalReport evaluate(const AtpNet<float>& model, std::span<const NamedImage> images, double requested_mr,
                    const std::string& model_id, const EvalOptions& options = {});

// Infinite PSNR values are written as the string "inf".
std::string report_json(const EvalReport& report);
// name,width,height,psnr rows followed by a mean row.
std::string report_csv(const EvalReport& report);

inline constexpr std::uint32_t kMeasurementFormatVersion = 1;

struct MeasurementDump {
  Tensor<float> values;  // (b, out_channels, H / bs, W / bs)
  double mr = 0;
};

// "ATPM" | u32 version | 4 x u32 shape | f64 mr | f32 values; little-endian.
std::vector<std::uint8_t> serialize_measurements(const MeasurementDump& dump);
MeasurementDump deserialize_measurements(std::span<const std::uint8_t> bytes);
void save_measurements(const std::filesystem::path& path, const MeasurementDump& dump);
MeasurementDump load_measurements(const std::filesystem::path& path);

// Packs a ternary sampler, one row per filter; raises QuantizationError
// unless the sampler is in ternary mode.
PackedTernaryMatrix pack_sampler(const SamplingLayer<float>& sampler, double sparsity_rate);

}  // namespace atp
