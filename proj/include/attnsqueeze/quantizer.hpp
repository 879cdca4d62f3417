#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "attnsqueeze/tensor.hpp"

namespace attnsqueeze {

enum class QuantMethod : std::uint8_t { linear = 0, log = 1, boolean = 2 };

std::string_view to_string(QuantMethod method) noexcept;
std::optional<QuantMethod> parse_quant_method(std::string_view name) noexcept;

inline constexpr double kDefaultLogFloor = 1e-10;

struct QuantSpec {
  QuantMethod method = QuantMethod::log;
  int bits = 3;
  double prune_threshold = 0.0;  // 0 = unpruned
  double log_floor = kDefaultLogFloor;

  bool pruned() const noexcept { return prune_threshold > 0.0; }
  void validate() const;

  friend bool operator==(const QuantSpec&, const QuantSpec&) = default;
};

nlohmann::json to_json(const QuantSpec& spec);
QuantSpec quant_spec_from_json(const nlohmann::json& j);

// Discrete output alphabet of one quantizer configuration.
//
// Values are binned on a linear scale (linear) or log2 scale (log); each
// surviving bin emits its midpoint. Bins below `first_bin` and anything under
// `lower_cut` map to zero. Code 0 is reserved for zero; `levels[c - 1]` is the
// value of code c.
struct Codebook {
  QuantMethod method = QuantMethod::log;
  int bits = 0;
  double prune_threshold = 0.0;
  double quantile_size = 0.0;  // linear units, or log2 units for log
  double log_origin = 0.0;     // log2 of the effective threshold (log only)
  double lower_cut = 0.0;
  std::uint32_t first_bin = 0;
  std::uint32_t top_bin = 0;
  bool zero_included = true;
  std::vector<double> levels;  // strictly increasing

  QuantSpec spec() const;
  std::size_t code_count() const noexcept { return levels.size() + 1; }

  // Bin of x on this codebook's scale, clamped to top_bin; nullopt when x
  // maps to zero.
  std::optional<std::uint32_t> bin_of(double x) const;
  // Code (0 for zero) that x quantizes to.
  std::uint32_t encode_value(double x) const;

  // Levels rounded to binary32, as stored in tensors and SPQA headers.
  std::vector<float> levels_f32() const;
};

Codebook build_codebook(const QuantSpec& spec);

double quantize_linear(double x, const Codebook& codebook);
double quantize_log(double x, const Codebook& codebook);
double quantize_boolean(double x, const Codebook& codebook);
// Dispatches on codebook.method.
double quantize(double x, const Codebook& codebook);

// Element-wise quantization of binary32 values; outputs are exact binary32
// codebook levels or zero. Inputs must already be validated.
void quantize_values(std::span<const float> in, std::span<float> out, const Codebook& codebook);

// Prunes (when the spec has a threshold) and then quantizes every element.
std::pair<AttentionTensor, Codebook> quantize_tensor(const AttentionTensor& tensor, const QuantSpec& spec);

// Bijection between {0} U levels (as binary32) and [0, |levels|].
std::uint32_t code_of(float value, std::span<const float> levels);
float value_of(std::uint32_t code, std::span<const float> levels);
std::uint32_t code_of(float value, const Codebook& codebook);
float value_of(std::uint32_t code, const Codebook& codebook);

}  // namespace attnsqueeze
