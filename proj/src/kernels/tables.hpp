#pragma once

#include "attnsqueeze/kernels.hpp"

namespace attnsqueeze::kernels {

#if defined(ATTNSQUEEZE_HAVE_AVX2)
const KernelTable& avx2_table() noexcept;
#endif
#if defined(ATTNSQUEEZE_HAVE_NEON)
const KernelTable& neon_table() noexcept;
#endif

namespace scalar {
std::size_t find_invalid(std::span<const float> values);
void prune(std::span<float> values, float cut);
std::size_t count_below(std::span<const float> values, float cut);
double sum(std::span<const float> values);
void quantize_linear(std::span<const float> in, std::span<float> out, const LinearBins& bins);
void nonzero_mask(std::span<const float> values, std::span<std::uint8_t> out);
}  // namespace scalar

}  // namespace attnsqueeze::kernels
