#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace attnsqueeze {

inline constexpr double kDefaultSparsityEpsilon = 1e-8;

// Read-only view of one head's N x N attention matrix (rows are queries).
struct HeadView {
  std::span<const float> values;
  std::uint32_t tokens = 0;

  std::span<const float> row(std::uint32_t query) const {
    return values.subspan(static_cast<std::size_t>(query) * tokens, tokens);
  }
};

struct Location {
  std::uint32_t layer = 0;
  std::uint32_t head = 0;
  std::uint32_t query = 0;
  std::uint32_t key = 0;
};

// L x H x N x N post-softmax attention, stored row-major as
// [layer][head][query][key] in binary32.
class AttentionTensor {
 public:
  AttentionTensor() = default;
  AttentionTensor(std::uint32_t layers, std::uint32_t heads, std::uint32_t tokens);
  AttentionTensor(std::uint32_t layers, std::uint32_t heads, std::uint32_t tokens,
                  std::vector<float> values);

  std::uint32_t layers() const noexcept { return layers_; }
  std::uint32_t heads() const noexcept { return heads_; }
  std::uint32_t tokens() const noexcept { return tokens_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t head_count() const noexcept { return std::size_t{layers_} * heads_; }
  std::size_t row_count() const noexcept { return head_count() * tokens_; }
  bool empty() const noexcept { return values_.empty(); }

  std::span<float> values() noexcept { return values_; }
  std::span<const float> values() const noexcept { return values_; }

  std::span<float> head_values(std::uint32_t layer, std::uint32_t head);
  std::span<const float> head_values(std::uint32_t layer, std::uint32_t head) const;
  HeadView head(std::uint32_t layer, std::uint32_t head) const;
  std::span<float> row(std::uint32_t layer, std::uint32_t head, std::uint32_t query);
  std::span<const float> row(std::uint32_t layer, std::uint32_t head, std::uint32_t query) const;

  float at(std::uint32_t layer, std::uint32_t head, std::uint32_t query, std::uint32_t key) const;
  Location location_of(std::size_t flat_index) const;

  friend bool operator==(const AttentionTensor& a, const AttentionTensor& b) = default;

 private:
  std::size_t head_offset(std::uint32_t layer, std::uint32_t head) const;

  std::uint32_t layers_ = 0;
  std::uint32_t heads_ = 0;
  std::uint32_t tokens_ = 0;
  std::vector<float> values_;
};

struct PruneSpec {
  double threshold = 0.0;

  void validate() const;
};

struct SparsityLevel {
  double epsilon = kDefaultSparsityEpsilon;
  double fraction = 0.0;
  std::uint64_t below = 0;
  std::uint64_t total = 0;
};

// Throws Errc::non_finite / Errc::out_of_range naming the first offending
// element unless every value is finite and in [0, 1].
void validate_values(const AttentionTensor& tensor);

// Throws Errc::out_of_range unless every row sums to 1 within `tolerance`.
void validate_row_stochastic(const AttentionTensor& tensor, double tolerance = 1e-3);

// Per-row sums accumulated in double, in (layer, head, query) order.
std::vector<double> row_sums(const AttentionTensor& tensor);

// Zeroes every value strictly below the threshold; survivors are untouched
// and rows are not renormalized.
AttentionTensor prune(const AttentionTensor& tensor, PruneSpec spec);
void prune_in_place(std::span<float> values, PruneSpec spec);

// Fraction of values strictly below epsilon over the given scope.
SparsityLevel measure_sparsity(std::span<const float> values,
                               double epsilon = kDefaultSparsityEpsilon);
SparsityLevel measure_sparsity(const AttentionTensor& tensor,
                               double epsilon = kDefaultSparsityEpsilon);

}  // namespace attnsqueeze
