#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attnsqueeze/quantizer.hpp"
#include "attnsqueeze/tensor.hpp"

// Desk-scale pre-norm transformer encoder used to measure how pruning and
// quantizing post-softmax attention perturbs a model's outputs.
namespace attnsqueeze::toy {

struct ToyConfig {
  std::uint32_t layers = 2;
  std::uint32_t heads = 4;
  std::uint32_t width = 32;
  std::uint32_t vocab = 64;
  std::uint32_t seq_len = 32;
  std::uint32_t ff_width = 64;

  std::uint32_t head_width() const noexcept { return width / heads; }
  void validate() const;
};

struct WeightTensor {
  std::vector<std::uint32_t> shape;
  std::vector<float> values;
};

// Raw little-endian binary32 arrays described by a JSON manifest (names,
// shapes, byte offsets, SHA-256 of the data file).
class WeightBundle {
 public:
  static WeightBundle load(const std::filesystem::path& manifest);

  const ToyConfig& config() const noexcept { return config_; }
  const std::string& sha256() const noexcept { return sha256_; }
  // Throws Errc::shape_mismatch if missing or of a different shape.
  std::span<const float> tensor(const std::string& name, std::initializer_list<std::uint32_t> shape) const;

 private:
  ToyConfig config_;
  std::string sha256_;
  std::map<std::string, WeightTensor> tensors_;
};

std::string sha256_hex(std::span<const std::uint8_t> bytes);

// Applied to each head's post-softmax attention before the value mix: prune
// first, then quantize.
struct AttentionTransform {
  std::optional<PruneSpec> prune;
  std::optional<QuantSpec> quant;

  bool is_identity() const noexcept { return !prune && !quant; }
};

struct ForwardResult {
  std::uint32_t positions = 0;
  std::vector<double> logits;    // positions x vocab
  std::vector<double> hidden;    // positions x width, after the final norm
  AttentionTensor attention;     // captured before the transform
  AttentionTensor transformed;   // what the value mix actually used
};

ForwardResult forward(std::span<const std::uint32_t> tokens, const WeightBundle& weights,
                      const AttentionTransform& transform = {});

using Corpus = std::vector<std::vector<std::uint32_t>>;

// Newline-delimited sequences of space-separated token ids; blank lines are
// skipped.
Corpus load_corpus(const std::filesystem::path& path);
Corpus parse_corpus(const std::string& text);

// Fraction of rows (of `classes` logits each) whose argmax agrees; ties go
// to the lowest index.
double agreement(std::span<const double> baseline, std::span<const double> transformed, std::size_t classes);

// ||a - b||_2 / ||a||_2.
double relative_l2(std::span<const double> reference, std::span<const double> other);
// max |a - b| / max |a|.
double max_relative_deviation(std::span<const double> reference, std::span<const double> other);

struct SweepPoint {
  double threshold = 0.0;
  std::optional<QuantMethod> method;
  int bits = 0;

  AttentionTransform transform() const;
  std::string label() const;
};

struct DegradationRow {
  SweepPoint point;
  double induced_sparsity = 0.0;
  double agreement = 1.0;
  double rel_deviation = 0.0;
};

struct DegradationTable {
  std::vector<DegradationRow> rows;

  std::string to_csv() const;
};

struct SweepOptions {
  double epsilon = kDefaultSparsityEpsilon;
};

// One row per point, each compared against the untransformed model.
DegradationTable run_sweep(const Corpus& corpus, const WeightBundle& weights, std::span<const SweepPoint> points,
                           const SweepOptions& options = {});

}  // namespace attnsqueeze::toy
