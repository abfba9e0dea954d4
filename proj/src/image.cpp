#include "atpnet/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <limits>

#include "atpnet/binary_io.hpp"
#include "atpnet/errors.hpp"
#include "atpnet/log.hpp"
#include "atpnet/optim.hpp"

namespace atp {

Image::Image(std::int64_t width, std::int64_t height, std::uint8_t fill)
    : width(width), height(height), pixels(static_cast<std::size_t>(width * height), fill) {}

std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return static_cast<std::uint8_t>((299u * r + 587u * g + 114u * b + 500u) / 1000u);
}

namespace {

bool has_extension(const std::filesystem::path& path, const char* ext) {
  std::string e = path.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ext;
}

Image load_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw IoError("cannot read PNG '" + path.string() + "': " + png.message);
  }
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    std::string message = png.message;
    png_image_free(&png);
    throw IoError("cannot decode PNG '" + path.string() + "': " + message);
  }
  Image image(png.width, png.height);
  if (color) {
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
      image.pixels[i] = luma(buffer[3 * i], buffer[3 * i + 1], buffer[3 * i + 2]);
    }
  } else {
    image.pixels = std::move(buffer);
  }
  return image;
}

// Minimal netpbm tokenizer: skips whitespace and '#' comments.
class PgmTokens {
 public:
  PgmTokens(std::span<const std::uint8_t> bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}

  std::string next() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
    std::string token;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_]) && bytes_[pos_] != '#') token += static_cast<char>(bytes_[pos_++]);
    if (token.empty()) throw IoError("truncated PGM header in '" + path_ + "'");
    return token;
  }

  std::int64_t number() {
    const std::string token = next();
    if (!std::all_of(token.begin(), token.end(), [](unsigned char c) { return std::isdigit(c); })) {
      throw IoError("malformed PGM field '" + token + "' in '" + path_ + "'");
    }
    return std::stoll(token);
  }

  std::size_t position() const { return pos_; }
  void skip_single_whitespace() { ++pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

Image load_pgm(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  PgmTokens tokens(bytes, path.string());
  const std::string magic = tokens.next();
  if (magic != "P5" && magic != "P2") throw IoError("'" + path.string() + "' is not a grayscale PGM (magic " + magic + ")");
  const std::int64_t width = tokens.number();
  const std::int64_t height = tokens.number();
  const std::int64_t maxval = tokens.number();
  if (width <= 0 || height <= 0) throw IoError("PGM '" + path.string() + "' has empty extents");
  if (maxval <= 0 || maxval > 255) {
    throw IoError("PGM '" + path.string() + "' has maxval " + std::to_string(maxval) + "; only 8-bit images are supported");
  }
  Image image(width, height);
  if (magic == "P5") {
    tokens.skip_single_whitespace();
    const std::size_t start = tokens.position();
    if (bytes.size() < start + image.pixels.size()) throw IoError("truncated PGM pixel data in '" + path.string() + "'");
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(start), image.pixels.size(), image.pixels.begin());
  } else {
    for (auto& p : image.pixels) p = static_cast<std::uint8_t>(std::min<std::int64_t>(tokens.number(), maxval));
  }
  if (maxval != 255) {
    for (auto& p : image.pixels) p = static_cast<std::uint8_t>((p * 255 + maxval / 2) / maxval);
  }
  return image;
}

}  // namespace

Image load_grayscale(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw IoError("image '" + path.string() + "' does not exist");
  if (has_extension(path, ".png")) return load_png(path);
  if (has_extension(path, ".pgm")) return load_pgm(path);
  throw IoError("unsupported image format for '" + path.string() + "' (expected .png or .pgm)");
}

void save_png(const std::filesystem::path& path, const Image& image) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write PNG '" + path.string() + "': " + png.message);
  }
}

void save_pgm(const std::filesystem::path& path, const Image& image) {
  ByteWriter out;
  const std::string header = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.raw({reinterpret_cast<const std::uint8_t*>(header.data()), header.size()});
  out.raw(image.pixels);
  write_file(path, out.bytes());
}

Image crop(const Image& image, std::int64_t top, std::int64_t left, std::int64_t height, std::int64_t width) {
  if (top < 0 || left < 0 || top + height > image.height || left + width > image.width) {
    throw InputSizeError("crop window exceeds the " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                         " image");
  }
  Image out(width, height);
  for (std::int64_t y = 0; y < height; ++y) {
    std::copy_n(image.pixels.begin() + (top + y) * image.width + left, width, out.pixels.begin() + y * width);
  }
  return out;
}

Image validate_input_size(const Image& image, std::int64_t block_size) {
  if (image.height < block_size || image.width < block_size) {
    throw InputSizeError("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                         " has an extent smaller than the block size " + std::to_string(block_size) +
                         "; no output can be obtained");
  }
  const std::int64_t height = image.height / block_size * block_size;
  const std::int64_t width = image.width / block_size * block_size;
  if (height == image.height && width == image.width) return image;
  return crop(image, (image.height - height) / 2, (image.width - width) / 2, height, width);
}

Image flip_horizontal(const Image& image) {
  Image out = image;
  for (std::int64_t y = 0; y < image.height; ++y) {
    auto row = out.pixels.begin() + y * image.width;
    std::reverse(row, row + image.width);
  }
  return out;
}

Image flip_vertical(const Image& image) {
  Image out(image.width, image.height);
  for (std::int64_t y = 0; y < image.height; ++y) {
    std::copy_n(image.pixels.begin() + (image.height - 1 - y) * image.width, image.width,
                out.pixels.begin() + y * image.width);
  }
  return out;
}

Tensor<float> to_tensor(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("to_tensor: no images");
  const std::int64_t h = images.front().height;
  const std::int64_t w = images.front().width;
  std::vector<float> values;
  values.reserve(images.size() * static_cast<std::size_t>(h * w));
  for (const Image& image : images) {
    if (image.height != h || image.width != w) throw ShapeError("to_tensor: images differ in size");
    for (std::uint8_t p : image.pixels) values.push_back(static_cast<float>(p) / 255.0f);
  }
  return Tensor<float>(Shape{static_cast<std::int64_t>(images.size()), 1, h, w}, std::move(values));
}

Tensor<float> to_tensor(const Image& image) { return to_tensor(std::span<const Image>(&image, 1)); }

Image to_image(const Tensor<float>& tensor, std::int64_t n) {
  const Shape& s = tensor.shape();
  if (s.c() != 1) throw ShapeError("to_image: expected one channel, got " + s.to_string());
  if (n < 0 || n >= s.n()) throw ShapeError("to_image: batch index out of range");
  Image image(s.w(), s.h());
  const float* src = tensor.data().data() + n * s.h() * s.w();
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const float v = std::isfinite(src[i]) ? std::clamp(src[i], 0.0f, 1.0f) : 0.0f;
    image.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return image;
}

Image augment_image(const Image& image, const AugmentOptions& options, std::mt19937_64& rng) {
  if (image.height < options.crop || image.width < options.crop) {
    throw InputSizeError("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                         " is smaller than the " + std::to_string(options.crop) + " crop");
  }
  const auto draw_index = [&](std::int64_t count) {
    return std::min(count - 1, static_cast<std::int64_t>(uniform(rng, 0.0, 1.0) * static_cast<double>(count)));
  };
  const std::int64_t top = draw_index(image.height - options.crop + 1);
  const std::int64_t left = draw_index(image.width - options.crop + 1);
  const bool horizontal = uniform(rng, 0.0, 1.0) < options.flip_prob;
  const bool vertical = uniform(rng, 0.0, 1.0) < options.flip_prob;
  Image out = crop(image, top, left, options.crop, options.crop);
  if (horizontal) out = flip_horizontal(out);
  if (vertical) out = flip_vertical(out);
  return out;
}

Tensor<float> augment(const Image& image, const AugmentOptions& options, std::mt19937_64& rng) {
  return to_tensor(augment_image(image, options, rng));
}

double psnr(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) {
    throw ShapeError("psnr: image sizes differ (" + std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                     std::to_string(b.width) + "x" + std::to_string(b.height) + ")");
  }
  if (a.pixels.empty()) throw ShapeError("psnr: empty images");
  double total = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    total += d * d;
  }
  if (total == 0) return std::numeric_limits<double>::infinity();
  const double mse = total / static_cast<double>(a.pixels.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

std::vector<NamedImage> load_image_directory(const std::filesystem::path& directory) {
  if (!std::filesystem::is_directory(directory)) throw IoError("'" + directory.string() + "' is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(directory)) {
    if (entry.is_regular_file() && (has_extension(entry.path(), ".png") || has_extension(entry.path(), ".pgm"))) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
  std::vector<NamedImage> images;
  for (const auto& file : files) images.push_back({file.filename().string(), load_grayscale(file)});
  return images;
}

}  // namespace atp
