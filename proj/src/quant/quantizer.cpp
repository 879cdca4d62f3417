#include "attnsqueeze/quantizer.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

#include "attnsqueeze/error.hpp"
#include "attnsqueeze/kernels.hpp"
#include "attnsqueeze/parallel.hpp"

namespace attnsqueeze {
namespace {

void check_input(double x) {
  if (!std::isfinite(x)) throw Error(Errc::non_finite, fmt::format("cannot quantize non-finite value {}", x));
  if (x < 0.0 || x > 1.0) throw Error(Errc::out_of_range, fmt::format("cannot quantize {} (outside [0, 1])", x));
}

void check_method(const Codebook& codebook, QuantMethod expected) {
  if (codebook.method != expected) {
    throw Error(Errc::invalid_argument, fmt::format("codebook method is {}, expected {}", to_string(codebook.method),
                                                    to_string(expected)));
  }
}

}  // namespace

std::string_view to_string(QuantMethod method) noexcept {
  switch (method) {
    case QuantMethod::linear: return "linear";
    case QuantMethod::log: return "log";
    case QuantMethod::boolean: return "boolean";
  }
  return "unknown";
}

std::optional<QuantMethod> parse_quant_method(std::string_view name) noexcept {
  if (name == "linear") return QuantMethod::linear;
  if (name == "log") return QuantMethod::log;
  if (name == "boolean") return QuantMethod::boolean;
  return std::nullopt;
}

void QuantSpec::validate() const {
  if (bits < 1 || bits > 8) throw Error(Errc::invalid_argument, fmt::format("bits must be in [1, 8] (got {})", bits));
  if (!std::isfinite(prune_threshold) || prune_threshold < 0.0 || prune_threshold >= 1.0) {
    throw Error(Errc::invalid_argument, fmt::format("prune threshold must be in [0, 1) (got {})", prune_threshold));
  }
  if (!(log_floor > 0.0 && log_floor < 1.0)) {
    throw Error(Errc::invalid_argument, fmt::format("log floor must be in (0, 1) (got {})", log_floor));
  }
}

nlohmann::json to_json(const QuantSpec& spec) {
  return nlohmann::json{
      {"method", std::string(to_string(spec.method))},
      {"bits", spec.bits},
      {"prune_threshold", spec.prune_threshold},
  };
}

QuantSpec quant_spec_from_json(const nlohmann::json& j) {
  QuantSpec spec;
  try {
    const auto method = parse_quant_method(j.at("method").get<std::string>());
    if (!method) throw Error(Errc::malformed, fmt::format("unknown quantization method {}", j.at("method").dump()));
    spec.method = *method;
    spec.bits = j.at("bits").get<int>();
    spec.prune_threshold = j.value("prune_threshold", 0.0);
    spec.log_floor = j.value("log_floor", kDefaultLogFloor);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::malformed, fmt::format("bad QuantSpec JSON: {}", e.what()));
  }
  spec.validate();
  return spec;
}

QuantSpec Codebook::spec() const {
  QuantSpec s;
  s.method = method;
  s.bits = bits;
  s.prune_threshold = prune_threshold;
  if (method == QuantMethod::log && prune_threshold == 0.0) s.log_floor = std::exp2(log_origin);
  return s;
}

Codebook build_codebook(const QuantSpec& spec) {
  spec.validate();
  Codebook cb;
  cb.method = spec.method;
  cb.bits = spec.bits;
  cb.prune_threshold = spec.prune_threshold;
  const std::uint32_t bins = 1u << spec.bits;
  const double t = spec.prune_threshold;

  switch (spec.method) {
    case QuantMethod::linear: {
      cb.quantile_size = (1.0 - t) / static_cast<double>(bins);
      cb.lower_cut = cb.quantile_size + t;
      // Bin 0 sits entirely below lower_cut.
      cb.first_bin = 1;
      cb.top_bin = bins - 1;
      const double half = cb.quantile_size / 2.0;
      for (std::uint32_t b = cb.first_bin; b <= cb.top_bin; ++b) {
        cb.levels.push_back(static_cast<double>(b) * cb.quantile_size + half + t);
      }
      break;
    }
    case QuantMethod::log: {
      const bool pruned = spec.pruned();
      cb.log_origin = std::log2(pruned ? t : spec.log_floor);
      if (pruned) {
        // Everything below t is already zero, so all 2^k - 1 bins over
        // [t, 1] carry levels.
        cb.quantile_size = (0.0 - cb.log_origin) / static_cast<double>(bins - 1);
        cb.first_bin = 0;
        cb.top_bin = bins - 2;
        cb.lower_cut = t;
      } else {
        // 2^k bins over [floor, 1]; the lowest one is zeroed.
        cb.quantile_size = (0.0 - cb.log_origin) / static_cast<double>(bins);
        cb.first_bin = 1;
        cb.top_bin = bins - 1;
        cb.lower_cut = std::exp2(cb.log_origin + cb.quantile_size);
      }
      const double half = cb.quantile_size / 2.0;
      for (std::uint32_t b = cb.first_bin; b <= cb.top_bin; ++b) {
        cb.levels.push_back(std::exp2(static_cast<double>(b) * cb.quantile_size + half + cb.log_origin));
      }
      break;
    }
    case QuantMethod::boolean:
      cb.lower_cut = t > 0.0 ? t : std::numeric_limits<double>::denorm_min();
      cb.first_bin = 0;
      cb.top_bin = 0;
      cb.levels = {1.0};
      break;
  }
  return cb;
}

std::optional<std::uint32_t> Codebook::bin_of(double x) const {
  switch (method) {
    case QuantMethod::linear: {
      if (x < lower_cut) return std::nullopt;
      const double bin = std::min(std::floor(x / quantile_size), static_cast<double>(top_bin));
      return static_cast<std::uint32_t>(bin);
    }
    case QuantMethod::log: {
      if (!(x > 0.0)) return std::nullopt;
      const double bin = std::floor((std::log2(x) - log_origin) / quantile_size);
      if (bin < static_cast<double>(first_bin)) return std::nullopt;
      return static_cast<std::uint32_t>(std::min(bin, static_cast<double>(top_bin)));
    }
    case QuantMethod::boolean:
      if (x < lower_cut) return std::nullopt;
      return 0u;
  }
  return std::nullopt;
}

std::uint32_t Codebook::encode_value(double x) const {
  const auto bin = bin_of(x);
  return bin ? *bin - first_bin + 1 : 0u;
}

std::vector<float> Codebook::levels_f32() const {
  std::vector<float> out(levels.size());
  std::transform(levels.begin(), levels.end(), out.begin(), [](double v) { return static_cast<float>(v); });
  return out;
}

double quantize_linear(double x, const Codebook& codebook) {
  check_method(codebook, QuantMethod::linear);
  check_input(x);
  const auto bin = codebook.bin_of(x);
  return bin ? codebook.levels[*bin - codebook.first_bin] : 0.0;
}

double quantize_log(double x, const Codebook& codebook) {
  check_method(codebook, QuantMethod::log);
  check_input(x);
  const auto bin = codebook.bin_of(x);
  return bin ? codebook.levels[*bin - codebook.first_bin] : 0.0;
}

double quantize_boolean(double x, const Codebook& codebook) {
  check_method(codebook, QuantMethod::boolean);
  check_input(x);
  return codebook.bin_of(x) ? 1.0 : 0.0;
}

double quantize(double x, const Codebook& codebook) {
  switch (codebook.method) {
    case QuantMethod::linear: return quantize_linear(x, codebook);
    case QuantMethod::log: return quantize_log(x, codebook);
    case QuantMethod::boolean: return quantize_boolean(x, codebook);
  }
  return 0.0;
}

void quantize_values(std::span<const float> in, std::span<float> out, const Codebook& codebook) {
  if (in.size() != out.size()) throw Error(Errc::shape_mismatch, "quantize_values: input/output size mismatch");
  const std::vector<float> levels = codebook.levels_f32();
  if (codebook.method == QuantMethod::linear) {
    std::vector<float> by_bin(codebook.top_bin + 1, 0.0f);
    std::copy(levels.begin(), levels.end(), by_bin.begin() + codebook.first_bin);
    const kernels::LinearBins bins{codebook.quantile_size, codebook.lower_cut, codebook.top_bin, by_bin};
    kernels::active().quantize_linear(in, out, bins);
    return;
  }
  for (std::size_t i = 0; i < in.size(); ++i) {
    const auto bin = codebook.bin_of(static_cast<double>(in[i]));
    out[i] = bin ? levels[*bin - codebook.first_bin] : 0.0f;
  }
}

std::pair<AttentionTensor, Codebook> quantize_tensor(const AttentionTensor& tensor, const QuantSpec& spec) {
  Codebook codebook = build_codebook(spec);
  validate_values(tensor);
  AttentionTensor out = tensor;
  const float cut = kernels::float_cut(spec.prune_threshold);
  parallel_for(out.head_count(), [&](std::size_t h) {
    auto values = out.head_values(static_cast<std::uint32_t>(h / out.heads()), static_cast<std::uint32_t>(h % out.heads()));
    if (spec.pruned()) kernels::active().prune(values, cut);
    quantize_values(values, values, codebook);
  });
  return {std::move(out), std::move(codebook)};
}

std::uint32_t code_of(float value, std::span<const float> levels) {
  if (value == 0.0f) return 0;
  const auto it = std::lower_bound(levels.begin(), levels.end(), value);
  if (it == levels.end() || *it != value) {
    throw Error(Errc::stray_value, fmt::format("value {:.9g} is not a codebook level", value));
  }
  return static_cast<std::uint32_t>(it - levels.begin()) + 1;
}

float value_of(std::uint32_t code, std::span<const float> levels) {
  if (code == 0) return 0.0f;
  if (code > levels.size()) {
    throw Error(Errc::code_out_of_range, fmt::format("code {} exceeds codebook size {}", code, levels.size()));
  }
  return levels[code - 1];
}

std::uint32_t code_of(float value, const Codebook& codebook) { return code_of(value, codebook.levels_f32()); }
float value_of(std::uint32_t code, const Codebook& codebook) { return value_of(code, codebook.levels_f32()); }

}  // namespace attnsqueeze
