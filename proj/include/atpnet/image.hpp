#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "atpnet/tensor.hpp"

namespace atp {

// 8-bit grayscale pixel grid, row-major.
struct Image {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::int64_t width, std::int64_t height, std::uint8_t fill = 0);

  std::uint8_t at(std::int64_t y, std::int64_t x) const { return pixels[static_cast<std::size_t>(y * width + x)]; }
  std::uint8_t& at(std::int64_t y, std::int64_t x) { return pixels[static_cast<std::size_t>(y * width + x)]; }
  bool operator==(const Image&) const = default;
};

// BT.601 luma, (299 R + 587 G + 114 B) / 1000 rounded half-up.
std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b);

// Reads an 8-bit PNG (any color type) or binary/ASCII PGM as grayscale.
Image load_grayscale(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const Image& image);
void save_pgm(const std::filesystem::path& path, const Image& image);

// Extents divisible by block_size pass unchanged; larger ones are
// center-cropped to the nearest multiple; anything smaller than one block
// raises InputSizeError.
Image validate_input_size(const Image& image, std::int64_t block_size);

Image crop(const Image& image, std::int64_t top, std::int64_t left, std::int64_t height, std::int64_t width);
Image flip_horizontal(const Image& image);
Image flip_vertical(const Image& image);

// Stacks images of equal size into (n, 1, h, w), scaled to [0, 1].
Tensor<float> to_tensor(std::span<const Image> images);
Tensor<float> to_tensor(const Image& image);
// Batch item n of a single-channel tensor, clamped to [0, 1] and rounded to 8 bits.
Image to_image(const Tensor<float>& tensor, std::int64_t n = 0);

struct AugmentOptions {
  std::int64_t crop = 96;
  double flip_prob = 0.5;
};

// Uniform random crop plus independent horizontal and vertical flips.
// The draws are: top, left, horizontal flip, vertical flip (in that order).
Image augment_image(const Image& image, const AugmentOptions& options, std::mt19937_64& rng);
// augment_image normalized to a (1, 1, crop, crop) tensor.
Tensor<float> augment(const Image& image, const AugmentOptions& options, std::mt19937_64& rng);

// 10 log10(255^2 / MSE) over 8-bit pixels; +infinity for identical images.
double psnr(const Image& a, const Image& b);

struct NamedImage {
  std::string name;
  Image image;
};

// Every .png / .pgm file in a directory, sorted by filename.
std::vector<NamedImage> load_image_directory(const std::filesystem::path& directory);

}  // namespace atp
