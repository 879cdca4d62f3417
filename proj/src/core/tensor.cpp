#include "attnsqueeze/tensor.hpp"

#include <fmt/format.h>

#include <cmath>

#include "attnsqueeze/error.hpp"
#include "attnsqueeze/kernels.hpp"
#include "attnsqueeze/parallel.hpp"

namespace attnsqueeze {
namespace {

std::size_t element_count(std::uint32_t layers, std::uint32_t heads, std::uint32_t tokens) {
  if (layers == 0 || heads == 0 || tokens == 0) {
    throw Error(Errc::dimension_overflow,
                fmt::format("tensor dimensions must be >= 1 (got {}x{}x{})", layers, heads, tokens));
  }
  return std::size_t{layers} * heads * tokens * tokens;
}

void throw_invalid_value(const AttentionTensor& tensor, std::size_t index) {
  const Location at = tensor.location_of(index);
  const float v = tensor.values()[index];
  const Errc code = std::isfinite(v) ? Errc::out_of_range : Errc::non_finite;
  throw Error(code, fmt::format("attention value {} at layer {}, head {}, row {}, column {} is not in [0, 1]", v,
                                at.layer, at.head, at.query, at.key));
}

}  // namespace

AttentionTensor::AttentionTensor(std::uint32_t layers, std::uint32_t heads, std::uint32_t tokens)
    : layers_(layers), heads_(heads), tokens_(tokens), values_(element_count(layers, heads, tokens), 0.0f) {}

AttentionTensor::AttentionTensor(std::uint32_t layers, std::uint32_t heads, std::uint32_t tokens,
                                 std::vector<float> values)
    : layers_(layers), heads_(heads), tokens_(tokens), values_(std::move(values)) {
  const std::size_t expected = element_count(layers, heads, tokens);
  if (values_.size() != expected) {
    throw Error(Errc::shape_mismatch,
                fmt::format("{}x{}x{}x{} tensor needs {} values, got {}", layers, heads, tokens, tokens, expected,
                            values_.size()));
  }
}

std::size_t AttentionTensor::head_offset(std::uint32_t layer, std::uint32_t head) const {
  if (layer >= layers_ || head >= heads_) {
    throw Error(Errc::out_of_range, fmt::format("head ({}, {}) outside {}x{} tensor", layer, head, layers_, heads_));
  }
  return (std::size_t{layer} * heads_ + head) * tokens_ * tokens_;
}

std::span<float> AttentionTensor::head_values(std::uint32_t layer, std::uint32_t head) {
  return std::span<float>(values_).subspan(head_offset(layer, head), std::size_t{tokens_} * tokens_);
}

std::span<const float> AttentionTensor::head_values(std::uint32_t layer, std::uint32_t head) const {
  return std::span<const float>(values_).subspan(head_offset(layer, head), std::size_t{tokens_} * tokens_);
}

HeadView AttentionTensor::head(std::uint32_t layer, std::uint32_t head) const {
  return HeadView{head_values(layer, head), tokens_};
}

std::span<float> AttentionTensor::row(std::uint32_t layer, std::uint32_t head, std::uint32_t query) {
  return head_values(layer, head).subspan(std::size_t{query} * tokens_, tokens_);
}

std::span<const float> AttentionTensor::row(std::uint32_t layer, std::uint32_t head, std::uint32_t query) const {
  return head_values(layer, head).subspan(std::size_t{query} * tokens_, tokens_);
}

float AttentionTensor::at(std::uint32_t layer, std::uint32_t head, std::uint32_t query, std::uint32_t key) const {
  return row(layer, head, query)[key];
}

Location AttentionTensor::location_of(std::size_t flat_index) const {
  const std::size_t n = tokens_;
  Location at;
  at.key = static_cast<std::uint32_t>(flat_index % n);
  flat_index /= n;
  at.query = static_cast<std::uint32_t>(flat_index % n);
  flat_index /= n;
  at.head = static_cast<std::uint32_t>(flat_index % heads_);
  at.layer = static_cast<std::uint32_t>(flat_index / heads_);
  return at;
}

void PruneSpec::validate() const {
  if (!std::isfinite(threshold) || threshold < 0.0) {
    throw Error(Errc::invalid_argument, fmt::format("prune threshold must be finite and >= 0 (got {})", threshold));
  }
  if (threshold >= 1.0) {
    throw Error(Errc::invalid_argument, fmt::format("prune threshold must be < 1 (got {})", threshold));
  }
}

void validate_values(const AttentionTensor& tensor) {
  const std::size_t bad = kernels::active().find_invalid(tensor.values());
  if (bad != tensor.size()) throw_invalid_value(tensor, bad);
}

std::vector<double> row_sums(const AttentionTensor& tensor) {
  std::vector<double> sums(tensor.row_count());
  const auto& k = kernels::active();
  const std::size_t n = tensor.tokens();
  for (std::size_t r = 0; r < sums.size(); ++r) sums[r] = k.sum(tensor.values().subspan(r * n, n));
  return sums;
}

void validate_row_stochastic(const AttentionTensor& tensor, double tolerance) {
  const std::vector<double> sums = row_sums(tensor);
  for (std::size_t r = 0; r < sums.size(); ++r) {
    if (std::abs(sums[r] - 1.0) > tolerance) {
      const Location at = tensor.location_of(r * tensor.tokens());
      throw Error(Errc::out_of_range, fmt::format("row sum {:.9g} at layer {}, head {}, row {} is not 1 within {}",
                                                  sums[r], at.layer, at.head, at.query, tolerance));
    }
  }
}

void prune_in_place(std::span<float> values, PruneSpec spec) {
  spec.validate();
  kernels::active().prune(values, kernels::float_cut(spec.threshold));
}

AttentionTensor prune(const AttentionTensor& tensor, PruneSpec spec) {
  spec.validate();
  validate_values(tensor);
  AttentionTensor out = tensor;
  if (spec.threshold == 0.0) return out;
  const float cut = kernels::float_cut(spec.threshold);
  const auto& k = kernels::active();
  parallel_for(out.head_count(), [&](std::size_t h) {
    const auto layer = static_cast<std::uint32_t>(h / out.heads());
    const auto head = static_cast<std::uint32_t>(h % out.heads());
    k.prune(out.head_values(layer, head), cut);
  });
  return out;
}

SparsityLevel measure_sparsity(std::span<const float> values, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw Error(Errc::invalid_argument, fmt::format("sparsity epsilon must be in (0, 1) (got {})", epsilon));
  }
  if (values.empty()) throw Error(Errc::invalid_argument, "cannot measure sparsity of an empty scope");
  SparsityLevel level;
  level.epsilon = epsilon;
  level.total = values.size();
  level.below = kernels::active().count_below(values, kernels::float_cut(epsilon));
  level.fraction = static_cast<double>(level.below) / static_cast<double>(level.total);
  return level;
}

SparsityLevel measure_sparsity(const AttentionTensor& tensor, double epsilon) {
  return measure_sparsity(tensor.values(), epsilon);
}

}  // namespace attnsqueeze
