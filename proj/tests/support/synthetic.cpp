#include "synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "atpnet/optim.hpp"

namespace atp::testing {

Image synthetic_image(std::int64_t width, std::int64_t height, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto u = [&rng](double lo, double hi) { return uniform(rng, lo, hi); };
  std::vector<double> canvas(static_cast<std::size_t>(width * height));
  const double gx = u(-0.4, 0.4), gy = u(-0.4, 0.4), base = u(0.3, 0.7);
  for (std::int64_t y = 0; y < height; ++y) {
    for (std::int64_t x = 0; x < width; ++x) {
      canvas[static_cast<std::size_t>(y * width + x)] =
          base + gx * (static_cast<double>(x) / width - 0.5) + gy * (static_cast<double>(y) / height - 0.5);
    }
  }
  const int blobs = 3 + static_cast<int>(u(0, 4));
  for (int b = 0; b < blobs; ++b) {
    const double cx = u(0, width), cy = u(0, height), sigma = u(6, 28), amp = u(-0.35, 0.35);
    for (std::int64_t y = 0; y < height; ++y) {
      for (std::int64_t x = 0; x < width; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        canvas[static_cast<std::size_t>(y * width + x)] += amp * std::exp(-d2 / (2 * sigma * sigma));
      }
    }
  }
  const int shapes = 2 + static_cast<int>(u(0, 3));
  for (int s = 0; s < shapes; ++s) {
    const bool disk = u(0, 1) < 0.5;
    const double cx = u(0, width), cy = u(0, height), r = u(8, 30), level = u(-0.3, 0.3);
    const double angle = u(0, 3.14159265358979), c = std::cos(angle), sn = std::sin(angle);
    for (std::int64_t y = 0; y < height; ++y) {
      for (std::int64_t x = 0; x < width; ++x) {
        const double dx = x - cx, dy = y - cy;
        const bool inside = disk ? dx * dx + dy * dy < r * r
                                 : std::abs(c * dx + sn * dy) < r && std::abs(-sn * dx + c * dy) < 0.6 * r;
        if (inside) canvas[static_cast<std::size_t>(y * width + x)] += level;
      }
    }
  }
  Image image(width, height);
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    const double v = canvas[i] + u(-0.02, 0.02);
    image.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  }
  return image;
}

std::vector<Image> synthetic_set(std::size_t count, std::int64_t width, std::int64_t height, std::uint64_t seed) {
  std::vector<Image> images;
  for (std::size_t i = 0; i < count; ++i) images.push_back(synthetic_image(width, height, seed * 1000003 + i));
  return images;
}

Image block_mean(const Image& image, std::int64_t block_size) {
  Image out(image.width, image.height);
  for (std::int64_t by = 0; by < image.height / block_size; ++by) {
    for (std::int64_t bx = 0; bx < image.width / block_size; ++bx) {
      double total = 0;
      for (std::int64_t y = 0; y < block_size; ++y)
        for (std::int64_t x = 0; x < block_size; ++x) total += image.at(by * block_size + y, bx * block_size + x);
      const auto mean = static_cast<std::uint8_t>(std::lround(total / static_cast<double>(block_size * block_size)));
      for (std::int64_t y = 0; y < block_size; ++y)
        for (std::int64_t x = 0; x < block_size; ++x) out.at(by * block_size + y, bx * block_size + x) = mean;
    }
  }
  return out;
}

}  // namespace atp::testing
