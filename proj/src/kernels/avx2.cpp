// Built with -mavx2; only reached after a runtime CPU check.
#include <immintrin.h>

#include <algorithm>
#include <bit>

#include "tables.hpp"

namespace attnsqueeze::kernels {
namespace {

std::size_t find_invalid_avx2(std::span<const float> values) {
  const __m256 zero = _mm256_setzero_ps();
  const __m256 one = _mm256_set1_ps(1.0f);
  const std::size_t n = values.size();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(values.data() + i);
    const __m256 ok = _mm256_and_ps(_mm256_cmp_ps(v, zero, _CMP_GE_OQ), _mm256_cmp_ps(v, one, _CMP_LE_OQ));
    const unsigned mask = static_cast<unsigned>(_mm256_movemask_ps(ok));
    if (mask != 0xFFu) return i + static_cast<std::size_t>(std::countr_zero(~mask & 0xFFu));
  }
  const std::size_t tail = scalar::find_invalid(values.subspan(i));
  return i + tail;
}

void prune_avx2(std::span<float> values, float cut) {
  const __m256 c = _mm256_set1_ps(cut);
  const std::size_t n = values.size();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(values.data() + i);
    const __m256 below = _mm256_cmp_ps(v, c, _CMP_LT_OQ);
    _mm256_storeu_ps(values.data() + i, _mm256_andnot_ps(below, v));
  }
  scalar::prune(values.subspan(i), cut);
}

std::size_t count_below_avx2(std::span<const float> values, float cut) {
  const __m256 c = _mm256_set1_ps(cut);
  const std::size_t n = values.size();
  std::size_t count = 0;
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(values.data() + i);
    const unsigned mask = static_cast<unsigned>(_mm256_movemask_ps(_mm256_cmp_ps(v, c, _CMP_LT_OQ)));
    count += static_cast<std::size_t>(std::popcount(mask));
  }
  return count + scalar::count_below(values.subspan(i), cut);
}

double sum_avx2(std::span<const float> values) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t n = values.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_add_pd(acc, _mm256_cvtps_pd(_mm_loadu_ps(values.data() + i)));
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  double total = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) total += static_cast<double>(values[i]);
  return total;
}

void quantize_linear_avx2(std::span<const float> in, std::span<float> out, const LinearBins& bins) {
  const __m256d qs = _mm256_set1_pd(bins.quantile_size);
  const __m256d top = _mm256_set1_pd(static_cast<double>(bins.top_bin));
  const __m128 cut = _mm_set1_ps(float_cut(bins.lower_cut));
  const __m128 zero = _mm_setzero_ps();
  const float* levels = bins.levels_by_bin.data();
  const std::size_t n = in.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m128 xf = _mm_loadu_ps(in.data() + i);
    const __m256d x = _mm256_cvtps_pd(xf);
    const __m256d bin = _mm256_min_pd(_mm256_floor_pd(_mm256_div_pd(x, qs)), top);
    const __m128i idx = _mm256_cvttpd_epi32(bin);
    const __m128 level = _mm_i32gather_ps(levels, idx, 4);
    const __m128 below = _mm_cmplt_ps(xf, cut);
    _mm_storeu_ps(out.data() + i, _mm_blendv_ps(level, zero, below));
  }
  scalar::quantize_linear(in.subspan(i), out.subspan(i), bins);
}

void nonzero_mask_avx2(std::span<const float> values, std::span<std::uint8_t> out) {
  const __m256 zero = _mm256_setzero_ps();
  const std::size_t n = values.size();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(values.data() + i);
    out[i / 8] = static_cast<std::uint8_t>(_mm256_movemask_ps(_mm256_cmp_ps(v, zero, _CMP_NEQ_UQ)));
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

const KernelTable& avx2_table() noexcept {
  static const KernelTable table{
      "avx2",   find_invalid_avx2,    prune_avx2,        count_below_avx2,
      sum_avx2, quantize_linear_avx2, nonzero_mask_avx2,
  };
  return table;
}

}  // namespace attnsqueeze::kernels
