#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "attnsqueeze/quantizer.hpp"
#include "attnsqueeze/tensor.hpp"

namespace attnsqueeze {

inline constexpr std::array<std::uint8_t, 4> kSpqaMagic{0x53, 0x50, 0x51, 0x41};
inline constexpr std::uint32_t kSpqaVersion = 1;

struct SpqaHeader {
  std::uint32_t layers = 0;
  std::uint32_t heads = 0;
  std::uint32_t tokens = 0;
  QuantSpec spec;
  std::vector<float> levels;  // code c decodes to levels[c - 1]

  std::size_t bitmap_bytes() const noexcept { return (std::size_t{tokens} + 7) / 8; }
  std::size_t row_count() const noexcept { return std::size_t{layers} * heads * tokens; }
};

// One query row: occupancy bitmap (bit j LSB-first, set iff the value is
// non-zero) and the k-bit codes of the non-zero values in increasing j,
// packed LSB-first and padded to a whole byte.
struct EncodedRow {
  std::vector<std::uint8_t> bitmap;
  std::vector<std::uint8_t> codes;
};

struct SparseQuantizedAttention {
  SpqaHeader header;
  std::vector<EncodedRow> rows;  // (layer, head, query) order

  // Bits actually stored for the rows (bitmap + code bytes, byte aligned).
  std::uint64_t stored_row_bits() const;
};

std::size_t packed_code_bytes(std::size_t count, int bits) noexcept;

// Every value must be zero or one of codebook.levels_f32().
SparseQuantizedAttention encode(const AttentionTensor& quantized, const Codebook& codebook);
AttentionTensor decode(const SparseQuantizedAttention& stream);

std::vector<std::uint8_t> serialize_spqa(const SparseQuantizedAttention& stream);
SparseQuantizedAttention parse_spqa(std::span<const std::uint8_t> bytes);

SparseQuantizedAttention load_spqa(const std::filesystem::path& path);
void store_spqa(const SparseQuantizedAttention& stream, const std::filesystem::path& path);

enum class FootprintScheme { bitmap_packed, dense_float32 };

struct FootprintModel {
  FootprintScheme scheme = FootprintScheme::bitmap_packed;
  std::uint64_t tokens = 0;  // row length N
  double sparsity = 0.0;
  std::uint32_t bits = 0;
};

struct Footprint {
  std::uint64_t bits = 0;  // per row, header excluded
  double reduction = 0.0;  // 1 - bits / (32 N)
};

// bitmap_packed: N + ceil((1 - sparsity) N) k bits per row; dense_float32:
// 32 N.
Footprint footprint_bits(const FootprintModel& model);

}  // namespace attnsqueeze
