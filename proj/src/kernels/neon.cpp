#include <arm_neon.h>

#include <algorithm>
#include <cmath>

#include "tables.hpp"

namespace attnsqueeze::kernels {
namespace {

std::size_t find_invalid_neon(std::span<const float> values) {
  const float32x4_t zero = vdupq_n_f32(0.0f);
  const float32x4_t one = vdupq_n_f32(1.0f);
  const std::size_t n = values.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t v = vld1q_f32(values.data() + i);
    // Ordered comparisons: NaN lanes come out false.
    const uint32x4_t ok = vandq_u32(vcgeq_f32(v, zero), vcleq_f32(v, one));
    if (vminvq_u32(ok) == 0) break;
  }
  return i + scalar::find_invalid(values.subspan(i));
}

void prune_neon(std::span<float> values, float cut) {
  const float32x4_t c = vdupq_n_f32(cut);
  const std::size_t n = values.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t v = vld1q_f32(values.data() + i);
    const uint32x4_t keep = vmvnq_u32(vcltq_f32(v, c));
    vst1q_f32(values.data() + i, vreinterpretq_f32_u32(vandq_u32(vreinterpretq_u32_f32(v), keep)));
  }
  scalar::prune(values.subspan(i), cut);
}

std::size_t count_below_neon(std::span<const float> values, float cut) {
  const float32x4_t c = vdupq_n_f32(cut);
  const std::size_t n = values.size();
  std::size_t count = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const uint32x4_t below = vshrq_n_u32(vcltq_f32(vld1q_f32(values.data() + i), c), 31);
    count += vaddvq_u32(below);
  }
  return count + scalar::count_below(values.subspan(i), cut);
}

double sum_neon(std::span<const float> values) {
  float64x2_t lo = vdupq_n_f64(0.0);
  float64x2_t hi = vdupq_n_f64(0.0);
  const std::size_t n = values.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t v = vld1q_f32(values.data() + i);
    lo = vaddq_f64(lo, vcvt_f64_f32(vget_low_f32(v)));
    hi = vaddq_f64(hi, vcvt_high_f64_f32(v));
  }
  double total = (vgetq_lane_f64(lo, 0) + vgetq_lane_f64(lo, 1)) +
                 (vgetq_lane_f64(hi, 0) + vgetq_lane_f64(hi, 1));
  for (; i < n; ++i) total += static_cast<double>(values[i]);
  return total;
}

void quantize_linear_neon(std::span<const float> in, std::span<float> out, const LinearBins& bins) {
  const float64x2_t qs = vdupq_n_f64(bins.quantile_size);
  const float64x2_t top = vdupq_n_f64(static_cast<double>(bins.top_bin));
  const float cut = float_cut(bins.lower_cut);
  const std::size_t n = in.size();
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float32x2_t xf = vld1_f32(in.data() + i);
    const float64x2_t x = vcvt_f64_f32(xf);
    const float64x2_t bin = vminq_f64(vrndmq_f64(vdivq_f64(x, qs)), top);
    const uint64x2_t idx = vcvtq_u64_f64(bin);
    for (std::size_t lane = 0; lane < 2; ++lane) {
      const std::uint64_t b = lane == 0 ? vgetq_lane_u64(idx, 0) : vgetq_lane_u64(idx, 1);
      out[i + lane] = in[i + lane] < cut ? 0.0f : bins.levels_by_bin[b];
    }
  }
  scalar::quantize_linear(in.subspan(i), out.subspan(i), bins);
}

void nonzero_mask_neon(std::span<const float> values, std::span<std::uint8_t> out) {
  static const uint32_t kWeights[4] = {1, 2, 4, 8};
  const uint32x4_t weights = vld1q_u32(kWeights);
  const float32x4_t zero = vdupq_n_f32(0.0f);
  const std::size_t n = values.size();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const uint32x4_t lo = vmvnq_u32(vceqq_f32(vld1q_f32(values.data() + i), zero));
    const uint32x4_t hi = vmvnq_u32(vceqq_f32(vld1q_f32(values.data() + i + 4), zero));
    const std::uint32_t bits = vaddvq_u32(vandq_u32(lo, weights)) | (vaddvq_u32(vandq_u32(hi, weights)) << 4);
    out[i / 8] = static_cast<std::uint8_t>(bits);
  }
  if (i < n) {
    std::uint8_t last = 0;
    for (std::size_t j = i; j < n; ++j) {
      if (values[j] != 0.0f) last |= static_cast<std::uint8_t>(1u << (j - i));
    }
    out[i / 8] = last;
  }
}

}  // namespace

const KernelTable& neon_table() noexcept {
  static const KernelTable table{
      "neon",   find_invalid_neon,    prune_neon,        count_below_neon,
      sum_neon, quantize_linear_neon, nonzero_mask_neon,
  };
  return table;
}

}  // namespace attnsqueeze::kernels
