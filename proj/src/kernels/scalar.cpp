#include <algorithm>
#include <cmath>

#include "tables.hpp"

namespace attnsqueeze::kernels {
namespace scalar {

std::size_t find_invalid(std::span<const float> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = values[i];
    // NaN fails both comparisons.
    if (!(v >= 0.0f && v <= 1.0f)) return i;
  }
  return values.size();
}

void prune(std::span<float> values, float cut) {
  for (float& v : values) {
    if (v < cut) v = 0.0f;
  }
}

std::size_t count_below(std::span<const float> values, float cut) {
  std::size_t n = 0;
  for (float v : values) n += v < cut ? 1 : 0;
  return n;
}

double sum(std::span<const float> values) {
  double acc = 0.0;
  for (float v : values) acc += static_cast<double>(v);
  return acc;
}

void quantize_linear(std::span<const float> in, std::span<float> out, const LinearBins& bins) {
  const double top = static_cast<double>(bins.top_bin);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double x = static_cast<double>(in[i]);
    if (x < bins.lower_cut) {
      out[i] = 0.0f;
      continue;
    }
    const double bin = std::min(std::floor(x / bins.quantile_size), top);
    out[i] = bins.levels_by_bin[static_cast<std::size_t>(bin)];
  }
}

void nonzero_mask(std::span<const float> values, std::span<std::uint8_t> out) {
  std::fill(out.begin(), out.end(), std::uint8_t{0});
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (values[j] != 0.0f) out[j / 8] |= static_cast<std::uint8_t>(1u << (j % 8));
  }
}

}  // namespace scalar

const KernelTable& scalar_table() noexcept {
  static const KernelTable table{
      "scalar",           scalar::find_invalid,    scalar::prune,       scalar::count_below,
      scalar::sum,        scalar::quantize_linear, scalar::nonzero_mask,
  };
  return table;
}

}  // namespace attnsqueeze::kernels
