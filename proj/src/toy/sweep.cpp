#include <fmt/format.h>

#include <cmath>

#include "attnsqueeze/error.hpp"
#include "attnsqueeze/parallel.hpp"
#include "attnsqueeze/report.hpp"
#include "attnsqueeze/toy.hpp"

namespace attnsqueeze::toy {
namespace {

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c) {
    if (row[c] > row[best]) best = c;
  }
  return best;
}

}  // namespace

double agreement(std::span<const double> baseline, std::span<const double> transformed, std::size_t classes) {
  if (classes == 0 || baseline.size() != transformed.size() || baseline.size() % classes != 0 || baseline.empty()) {
    throw Error(Errc::shape_mismatch, fmt::format("agreement needs equal logit shapes with {} classes (got {} and {})",
                                                  classes, baseline.size(), transformed.size()));
  }
  const std::size_t rows = baseline.size() / classes;
  std::size_t same = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    same += argmax(baseline.subspan(r * classes, classes)) == argmax(transformed.subspan(r * classes, classes)) ? 1 : 0;
  }
  return static_cast<double>(same) / static_cast<double>(rows);
}

double relative_l2(std::span<const double> reference, std::span<const double> other) {
  if (reference.size() != other.size()) throw Error(Errc::shape_mismatch, "relative_l2: size mismatch");
  double diff = 0.0;
  double norm = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    diff += (reference[i] - other[i]) * (reference[i] - other[i]);
    norm += reference[i] * reference[i];
  }
  return norm == 0.0 ? std::sqrt(diff) : std::sqrt(diff / norm);
}

double max_relative_deviation(std::span<const double> reference, std::span<const double> other) {
  if (reference.size() != other.size()) throw Error(Errc::shape_mismatch, "max_relative_deviation: size mismatch");
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    diff = std::max(diff, std::abs(reference[i] - other[i]));
    scale = std::max(scale, std::abs(reference[i]));
  }
  return scale == 0.0 ? diff : diff / scale;
}

AttentionTransform SweepPoint::transform() const {
  AttentionTransform t;
  if (threshold > 0.0) t.prune = PruneSpec{threshold};
  if (method) {
    QuantSpec q;
    q.method = *method;
    q.bits = bits;
    q.prune_threshold = threshold;
    t.quant = q;
  }
  return t;
}

std::string SweepPoint::label() const {
  if (method) return threshold > 0.0 ? "prune+quantize" : "quantize";
  return threshold > 0.0 ? "prune" : "identity";
}

std::string DegradationTable::to_csv() const {
  std::string out = "transform,threshold,bits,method,induced_sparsity,agreement,rel_deviation\n";
  for (const DegradationRow& row : rows) {
    out += fmt::format("{},{},{},{},{},{},{}\n", row.point.label(), format_number(row.point.threshold),
                       row.point.method ? row.point.bits : 0,
                       row.point.method ? to_string(*row.point.method) : std::string_view("none"),
                       format_number(row.induced_sparsity), format_number(row.agreement),
                       format_number(row.rel_deviation));
  }
  return out;
}

DegradationTable run_sweep(const Corpus& corpus, const WeightBundle& weights, std::span<const SweepPoint> points,
                           const SweepOptions& options) {
  if (corpus.empty()) throw Error(Errc::invalid_argument, "sweep corpus is empty");
  const std::size_t vocab = weights.config().vocab;
  const std::size_t items = corpus.size();

  std::vector<ForwardResult> baseline(items);
  parallel_for(items, [&](std::size_t i) { baseline[i] = forward(corpus[i], weights); });
  std::vector<double> base_final(items * vocab);
  for (std::size_t i = 0; i < items; ++i) {
    const auto& logits = baseline[i].logits;
    std::copy(logits.end() - static_cast<std::ptrdiff_t>(vocab), logits.end(),
              base_final.begin() + static_cast<std::ptrdiff_t>(i * vocab));
  }

  DegradationTable table;
  for (const SweepPoint& point : points) {
    const AttentionTransform transform = point.transform();
    std::vector<double> sparsity(items);
    std::vector<double> deviation(items);
    std::vector<double> final_logits(items * vocab);
    parallel_for(items, [&](std::size_t i) {
      const ForwardResult r = forward(corpus[i], weights, transform);
      sparsity[i] = measure_sparsity(r.transformed, options.epsilon).fraction;
      deviation[i] = relative_l2(baseline[i].hidden, r.hidden);
      std::copy(r.logits.end() - static_cast<std::ptrdiff_t>(vocab), r.logits.end(),
                final_logits.begin() + static_cast<std::ptrdiff_t>(i * vocab));
    });
    DegradationRow row;
    row.point = point;
    for (std::size_t i = 0; i < items; ++i) {
      row.induced_sparsity += sparsity[i];
      row.rel_deviation += deviation[i];
    }
    row.induced_sparsity /= static_cast<double>(items);
    row.rel_deviation /= static_cast<double>(items);
    row.agreement = agreement(base_final, final_logits, vocab);
    table.rows.push_back(row);
  }
  return table;
}

}  // namespace attnsqueeze::toy
