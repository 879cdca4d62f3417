#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

// Data-parallel inner loops. Every entry has a scalar reference
// implementation; AVX2 (x86-64) and NEON (AArch64) variants are selected at
// runtime and must produce results identical to the scalar path (`sum` is the
// one exception: lane-wise accumulation reorders the additions).
namespace attnsqueeze::kernels {

// Linear quantization parameters, pre-resolved for the inner loop.
// `levels_by_bin[b]` is the binary32 output for bin b (bin 0 is never used
// because it lies below `lower_cut`).
struct LinearBins {
  double quantile_size = 0.0;
  double lower_cut = 0.0;
  std::uint32_t top_bin = 0;
  std::span<const float> levels_by_bin;
};

struct KernelTable {
  std::string_view name;
  // Index of the first value that is NaN, infinite or outside [0, 1];
  // values.size() when there is none.
  std::size_t (*find_invalid)(std::span<const float> values);
  // values[i] = 0 wherever values[i] < cut.
  void (*prune)(std::span<float> values, float cut);
  std::size_t (*count_below)(std::span<const float> values, float cut);
  double (*sum)(std::span<const float> values);
  void (*quantize_linear)(std::span<const float> in, std::span<float> out, const LinearBins& bins);
  // Bit j of out (byte j / 8, LSB first) set iff values[j] != 0. Unused
  // trailing bits are cleared. out.size() must be ceil(values.size() / 8).
  void (*nonzero_mask)(std::span<const float> values, std::span<std::uint8_t> out);
};

const KernelTable& scalar_table() noexcept;

// All variants usable on this CPU, scalar first.
std::vector<const KernelTable*> available_tables();

// Best available variant, unless ATTNSQUEEZE_SIMD names another one
// ("scalar", "avx2", "neon"). Selection happens once.
const KernelTable& active() noexcept;

// Overrides the active table; returns false if `name` is unavailable.
bool select(std::string_view name);

// Smallest binary32 value c with c >= threshold, so that for any binary32 x,
// (x < threshold) == (x < c).
float float_cut(double threshold) noexcept;

}  // namespace attnsqueeze::kernels
