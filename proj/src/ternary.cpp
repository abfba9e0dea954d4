#include "atpnet/ternary.hpp"

#include <bit>
#include <cmath>

#include "atpnet/binary_io.hpp"
#include "atpnet/errors.hpp"
#include "atpnet/sampling.hpp"

namespace atp {

namespace {

std::uint64_t padding_mask(std::int64_t cols) {
  const std::int64_t used = cols % 64;
  return used == 0 ? 0 : ~std::uint64_t{0} << used;
}

}  // namespace

std::int64_t PackedTernaryMatrix::nonzero_count() const {
  std::int64_t count = 0;
  for (std::uint64_t w : nonzero) count += std::popcount(w);
  return count;
}

void PackedTernaryMatrix::validate() const {
  if (rows < 0 || cols < 0) throw FormatError("packed matrix has negative extents");
  const auto words = static_cast<std::size_t>(rows * words_per_row());
  if (nonzero.size() != words || sign.size() != words) {
    throw FormatError("packed matrix planes hold " + std::to_string(nonzero.size()) + "/" +
                      std::to_string(sign.size()) + " words, expected " + std::to_string(words));
  }
  const std::uint64_t pad = padding_mask(cols);
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t k = 0; k < words_per_row(); ++k) {
      const auto i = static_cast<std::size_t>(r * words_per_row() + k);
      if (sign[i] & ~nonzero[i]) {
        throw FormatError("non-canonical packed matrix: sign bit set on a zero weight in row " + std::to_string(r));
      }
      if (k == words_per_row() - 1 && (nonzero[i] & pad)) {
        throw FormatError("packed matrix has nonzero padding bits in row " + std::to_string(r));
      }
    }
  }
}

PackedTernaryMatrix pack_codes(std::span<const std::int8_t> codes, std::int64_t rows, std::int64_t cols, float alpha,
                               float sparsity_rate) {
  if (rows < 0 || cols < 0 || static_cast<std::int64_t>(codes.size()) != rows * cols) {
    throw ShapeError("pack: " + std::to_string(codes.size()) + " codes for a " + std::to_string(rows) + "x" +
                     std::to_string(cols) + " matrix");
  }
  PackedTernaryMatrix packed;
  packed.rows = rows;
  packed.cols = cols;
  packed.alpha = alpha;
  packed.sparsity_rate = sparsity_rate;
  const std::int64_t wpr = packed.words_per_row();
  packed.nonzero.assign(static_cast<std::size_t>(rows * wpr), 0);
  packed.sign.assign(static_cast<std::size_t>(rows * wpr), 0);
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t j = 0; j < cols; ++j) {
      const std::int8_t code = codes[static_cast<std::size_t>(r * cols + j)];
      if (code < -1 || code > 1) {
        throw QuantizationError("pack: code " + std::to_string(code) + " at index " + std::to_string(r * cols + j) +
                                " is not in {-1, 0, +1}");
      }
      if (code == 0) continue;
      const auto word = static_cast<std::size_t>(r * wpr + j / 64);
      const std::uint64_t bit = std::uint64_t{1} << (j % 64);
      packed.nonzero[word] |= bit;
      if (code > 0) packed.sign[word] |= bit;
    }
  }
  return packed;
}

PackedTernaryMatrix pack(std::span<const float> weights, std::int64_t rows, std::int64_t cols, float alpha,
                         float sparsity_rate) {
  if (static_cast<std::int64_t>(weights.size()) != rows * cols) {
    throw ShapeError("pack: " + std::to_string(weights.size()) + " weights for a " + std::to_string(rows) + "x" +
                     std::to_string(cols) + " matrix");
  }
  std::vector<std::int8_t> codes(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const float w = weights[i];
    if (w == 0.0f) {
      codes[i] = 0;
    } else if (w == alpha) {
      codes[i] = 1;
    } else if (w == -alpha) {
      codes[i] = -1;
    } else {
      throw QuantizationError("pack: weight " + std::to_string(w) + " at index " + std::to_string(i) +
                              " is not in {-alpha, 0, +alpha} with alpha = " + std::to_string(alpha));
    }
  }
  return pack_codes(codes, rows, cols, alpha, sparsity_rate);
}

std::vector<float> unpack(const PackedTernaryMatrix& packed) {
  packed.validate();
  const std::int64_t wpr = packed.words_per_row();
  std::vector<float> weights(static_cast<std::size_t>(packed.rows * packed.cols), 0.0f);
  for (std::int64_t r = 0; r < packed.rows; ++r) {
    for (std::int64_t j = 0; j < packed.cols; ++j) {
      const auto word = static_cast<std::size_t>(r * wpr + j / 64);
      const std::uint64_t bit = std::uint64_t{1} << (j % 64);
      if (packed.nonzero[word] & bit) {
        weights[static_cast<std::size_t>(r * packed.cols + j)] = (packed.sign[word] & bit) ? packed.alpha : -packed.alpha;
      }
    }
  }
  return weights;
}

namespace {

// Adds and subtracts the selected inputs of one row; no multiplications.
double signed_row_sum(const std::uint64_t* nonzero, const std::uint64_t* sign, std::int64_t words, const float* x) {
  double positive = 0;
  double negative = 0;
  for (std::int64_t k = 0; k < words; ++k) {
    const float* base = x + k * 64;
    std::uint64_t pos = nonzero[k] & sign[k];
    std::uint64_t neg = nonzero[k] & ~sign[k];
    while (pos) {
      positive += base[std::countr_zero(pos)];
      pos &= pos - 1;
    }
    while (neg) {
      negative += base[std::countr_zero(neg)];
      neg &= neg - 1;
    }
  }
  return positive - negative;
}

}  // namespace

std::vector<float> ternary_matvec(const PackedTernaryMatrix& packed, std::span<const float> x) {
  if (static_cast<std::int64_t>(x.size()) != packed.cols) {
    throw ShapeError("ternary_matvec: input length " + std::to_string(x.size()) + " does not match row length " +
                     std::to_string(packed.cols));
  }
  // Padding bits are zero, so reads past cols never happen; pad the input
  // anyway so the word loop can index a full 64 entries.
  const std::int64_t wpr = packed.words_per_row();
  std::vector<float> padded(static_cast<std::size_t>(wpr * 64), 0.0f);
  std::copy(x.begin(), x.end(), padded.begin());
  std::vector<float> y(static_cast<std::size_t>(packed.rows));
  for (std::int64_t r = 0; r < packed.rows; ++r) {
    const double raw = signed_row_sum(packed.nonzero.data() + r * wpr, packed.sign.data() + r * wpr, wpr, padded.data());
    y[static_cast<std::size_t>(r)] = static_cast<float>(static_cast<double>(packed.alpha) * raw);
  }
  return y;
}

Tensor<float> ternary_sample(const PackedTernaryMatrix& packed, const Tensor<float>& image, std::int64_t block_size) {
  const Shape& s = image.shape();
  validate_sample_extents(s.h(), s.w(), block_size);
  const std::int64_t block_pixels = block_size * block_size;
  if (s.c() * block_pixels != packed.cols) {
    throw ShapeError("ternary_sample: image with " + std::to_string(s.c()) + " channels and block size " +
                     std::to_string(block_size) + " gives blocks of " + std::to_string(s.c() * block_pixels) +
                     " values, packed rows hold " + std::to_string(packed.cols));
  }
  const std::int64_t by_count = s.h() / block_size;
  const std::int64_t bx_count = s.w() / block_size;
  const Shape out_shape{s.n(), packed.rows, by_count, bx_count};
  std::vector<float> out(static_cast<std::size_t>(out_shape.numel()));
  const std::int64_t wpr = packed.words_per_row();
  std::vector<float> block(static_cast<std::size_t>(wpr * 64), 0.0f);
  const float* pixels = image.data().data();
  for (std::int64_t n = 0; n < s.n(); ++n) {
    for (std::int64_t by = 0; by < by_count; ++by) {
      for (std::int64_t bx = 0; bx < bx_count; ++bx) {
        std::size_t k = 0;
        for (std::int64_t c = 0; c < s.c(); ++c) {
          for (std::int64_t y = 0; y < block_size; ++y) {
            const float* row = pixels + ((n * s.c() + c) * s.h() + by * block_size + y) * s.w() + bx * block_size;
            for (std::int64_t x = 0; x < block_size; ++x) block[k++] = row[x];
          }
        }
        for (std::int64_t r = 0; r < packed.rows; ++r) {
          const double raw =
              signed_row_sum(packed.nonzero.data() + r * wpr, packed.sign.data() + r * wpr, wpr, block.data());
          out[static_cast<std::size_t>(((n * packed.rows + r) * by_count + by) * bx_count + bx)] =
              static_cast<float>(static_cast<double>(packed.alpha) * raw);
        }
      }
    }
  }
  return Tensor<float>(out_shape, std::move(out));
}

StorageReport storage_report(const PackedTernaryMatrix& packed) {
  StorageReport report;
  const auto words = static_cast<std::uint64_t>(packed.rows * packed.words_per_row());
  report.packed_bytes = kPackedHeaderBytes + 2 * words * sizeof(std::uint64_t);
  report.float_bytes = static_cast<std::uint64_t>(packed.rows * packed.cols) * sizeof(float);
  report.ratio = static_cast<double>(report.float_bytes) / static_cast<double>(report.packed_bytes);
  return report;
}

std::vector<std::uint8_t> serialize_packed(const PackedTernaryMatrix& packed) {
  packed.validate();
  ByteWriter out;
  out.magic("ATPK");
  out.u32(kPackedFormatVersion);
  out.u32(static_cast<std::uint32_t>(packed.rows));
  out.u32(static_cast<std::uint32_t>(packed.cols));
  out.f32(packed.alpha);
  out.f32(packed.sparsity_rate);
  for (std::uint64_t w : packed.nonzero) out.u64(w);
  for (std::uint64_t w : packed.sign) out.u64(w);
  return out.take();
}

PackedTernaryMatrix deserialize_packed(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes, "packed matrix");
  in.expect_magic("ATPK");
  const std::uint32_t version = in.u32();
  if (version != kPackedFormatVersion) {
    throw FormatError("packed matrix: unsupported format version " + std::to_string(version));
  }
  PackedTernaryMatrix packed;
  packed.rows = in.u32();
  packed.cols = in.u32();
  packed.alpha = in.f32();
  packed.sparsity_rate = in.f32();
  const auto words = static_cast<std::size_t>(packed.rows * packed.words_per_row());
  if (in.remaining() != 2 * words * sizeof(std::uint64_t)) {
    throw FormatError("packed matrix: expected " + std::to_string(2 * words * 8) + " plane bytes, found " +
                      std::to_string(in.remaining()));
  }
  packed.nonzero.resize(words);
  packed.sign.resize(words);
  for (auto& w : packed.nonzero) w = in.u64();
  for (auto& w : packed.sign) w = in.u64();
  packed.validate();
  return packed;
}

void save_packed(const std::filesystem::path& path, const PackedTernaryMatrix& packed) {
  write_file(path, serialize_packed(packed));
}

PackedTernaryMatrix load_packed(const std::filesystem::path& path) { return deserialize_packed(read_file(path)); }

}  // namespace atp
