#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "atpnet/tensor.hpp"

namespace atp {

// Ternary weight matrix stored as two bitplanes plus one scale. Bit j of a
// row lives in word j / 64 at bit position j % 64 (little-endian). Rows are
// padded to whole 64-bit words with zero bits. Sign bits are only set where
// the weight is nonzero, so every matrix has exactly one encoding.
struct PackedTernaryMatrix {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  float alpha = 0;
  // Pruning rate the matrix was built with; informational.
  float sparsity_rate = 0;
  std::vector<std::uint64_t> nonzero;  // 1 = weight != 0
  std::vector<std::uint64_t> sign;     // 1 = weight > 0

  std::int64_t words_per_row() const { return (cols + 63) / 64; }
  std::int64_t nonzero_count() const;
  // Throws FormatError on a non-canonical or inconsistent encoding.
  void validate() const;
};

// codes in {-1, 0, +1}, row-major rows x cols.
PackedTernaryMatrix pack_codes(std::span<const std::int8_t> codes, std::int64_t rows, std::int64_t cols, float alpha,
                               float sparsity_rate = 0);

// weights must each be exactly -alpha, 0 or +alpha; anything else raises
// QuantizationError naming the offending index.
PackedTernaryMatrix pack(std::span<const float> weights, std::int64_t rows, std::int64_t cols, float alpha,
                         float sparsity_rate = 0);

std::vector<float> unpack(const PackedTernaryMatrix& packed);

// y[r] = alpha * (sum of x over positive entries - sum of x over negative
// entries), accumulated in double; alpha is the only multiplication.
std::vector<float> ternary_matvec(const PackedTernaryMatrix& packed, std::span<const float> x);

// Block sampling with a packed weight: each bs x bs block (all channels),
// flattened as (channel, row, col), goes through ternary_matvec.
// image: (b, cols / (bs*bs), H, W) -> (b, rows, H / bs, W / bs).
Tensor<float> ternary_sample(const PackedTernaryMatrix& packed, const Tensor<float>& image, std::int64_t block_size);

struct StorageReport {
  std::uint64_t packed_bytes = 0;
  std::uint64_t float_bytes = 0;
  double ratio = 0;  // float_bytes / packed_bytes
};

// Bytes of the serialized packed form (header + both planes) against
// 4 bytes per element for single precision.
StorageReport storage_report(const PackedTernaryMatrix& packed);

inline constexpr std::uint32_t kPackedFormatVersion = 1;
inline constexpr std::uint64_t kPackedHeaderBytes = 24;

// "ATPK" | u32 version | u32 rows | u32 cols | f32 alpha | f32 sparsity |
// nonzero plane (u64 words) | sign plane (u64 words); all little-endian.
std::vector<std::uint8_t> serialize_packed(const PackedTernaryMatrix& packed);
PackedTernaryMatrix deserialize_packed(std::span<const std::uint8_t> bytes);
void save_packed(const std::filesystem::path& path, const PackedTernaryMatrix& packed);
PackedTernaryMatrix load_packed(const std::filesystem::path& path);

}  // namespace atp
