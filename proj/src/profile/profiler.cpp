#include "attnsqueeze/profiler.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "attnsqueeze/error.hpp"
#include "attnsqueeze/kernels.hpp"
#include "attnsqueeze/parallel.hpp"

namespace attnsqueeze {
namespace {

void check_row(std::span<const float> row) {
  if (row.empty()) throw Error(Errc::invalid_argument, "empty attention row");
  const std::size_t bad = kernels::active().find_invalid(row);
  if (bad != row.size()) {
    const float v = row[bad];
    throw Error(std::isfinite(v) ? Errc::out_of_range : Errc::non_finite,
                fmt::format("attention value {} at column {} is not in [0, 1]", v, bad));
  }
}

void check_head(const HeadView& head) {
  if (head.tokens == 0 || head.values.size() != std::size_t{head.tokens} * head.tokens) {
    throw Error(Errc::invalid_argument, "empty or malformed attention head");
  }
}

struct PopulationStats {
  double mean = 0.0;
  double std = 0.0;
};

template <typename T>
PopulationStats population_stats(std::span<const T> xs) {
  PopulationStats s;
  if (xs.empty()) return s;
  const double n = static_cast<double>(xs.size());
  double total = 0.0;
  for (T x : xs) total += static_cast<double>(x);
  s.mean = total / n;
  double sq = 0.0;
  for (T x : xs) {
    const double d = static_cast<double>(x) - s.mean;
    sq += d * d;
  }
  s.std = std::sqrt(sq / n);
  return s;
}

}  // namespace

void HistogramSpec::validate() const {
  if (!(lower_bound > 0.0 && lower_bound < 1.0)) {
    throw Error(Errc::invalid_argument, fmt::format("histogram lower bound must be in (0, 1) (got {})", lower_bound));
  }
  if (bins_per_decade < 1 || bins_per_decade > 1000) {
    throw Error(Errc::invalid_argument, fmt::format("bins per decade must be in [1, 1000] (got {})", bins_per_decade));
  }
}

std::size_t HistogramSpec::log_bins() const {
  validate();
  const double decades = -std::log10(lower_bound);
  return static_cast<std::size_t>(std::max(1.0, std::ceil(bins_per_decade * decades - 1e-9)));
}

std::vector<float> HistogramSpec::edges() const {
  const std::size_t bins = log_bins();
  const double origin = std::log10(lower_bound);
  std::vector<float> edges(bins + 1);
  edges[0] = static_cast<float>(lower_bound);
  for (std::size_t m = 1; m < bins; ++m) {
    edges[m] = static_cast<float>(std::pow(10.0, origin + static_cast<double>(m) / bins_per_decade));
  }
  edges[bins] = 1.0f;
  return edges;
}

nlohmann::json to_json(const HistogramSpec& spec) {
  return nlohmann::json{{"lower_bound", spec.lower_bound},
                        {"bins_per_decade", spec.bins_per_decade},
                        {"underflow_bucket", spec.underflow_bucket}};
}

HistogramBinner::HistogramBinner(const HistogramSpec& spec) : spec_(spec), edges_(spec.edges()) {}

std::size_t HistogramBinner::bin_of(float v) const {
  const auto above = static_cast<std::size_t>(std::upper_bound(edges_.begin(), edges_.end(), v) - edges_.begin());
  return std::min(above, edges_.size() - 1);
}

RowHistogram histogram_from_counts(std::vector<std::uint64_t> counts) {
  RowHistogram h;
  h.counts = std::move(counts);
  h.total = std::accumulate(h.counts.begin(), h.counts.end(), std::uint64_t{0});
  h.density.assign(h.counts.size(), 0.0);
  h.cumulative.assign(h.counts.size(), 0.0);
  if (h.total == 0) return h;
  const double n = static_cast<double>(h.total);
  std::uint64_t running = 0;
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    running += h.counts[b];
    h.density[b] = static_cast<double>(h.counts[b]) / n;
    h.cumulative[b] = static_cast<double>(running) / n;
  }
  return h;
}

RowHistogram row_histogram(std::span<const float> row, const HistogramBinner& binner) {
  check_row(row);
  std::vector<std::uint64_t> counts(binner.bin_count(), 0);
  const bool keep_underflow = binner.spec().underflow_bucket;
  for (float v : row) {
    const std::size_t b = binner.bin_of(v);
    if (b == 0 && !keep_underflow) continue;
    ++counts[b];
  }
  RowHistogram h = histogram_from_counts(std::move(counts));
  if (h.total == 0) throw Error(Errc::invalid_argument, "no attention values fall inside the histogram range");
  return h;
}

RowHistogram row_histogram(std::span<const float> row, const HistogramSpec& spec) {
  return row_histogram(row, HistogramBinner(spec));
}

std::size_t sparsity_bar(std::uint64_t below, std::uint64_t total) noexcept {
  // Integer form of floor(10 * below / total), with sparsity 1.0 folded into
  // the last bar.
  return std::min<std::size_t>(kSparsityBars - 1, static_cast<std::size_t>((kSparsityBars * below) / total));
}

SparsityDistribution sparsity_distribution(const HeadView& head, double epsilon) {
  check_head(head);
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw Error(Errc::invalid_argument, fmt::format("sparsity epsilon must be in (0, 1) (got {})", epsilon));
  }
  const float cut = kernels::float_cut(epsilon);
  const auto& k = kernels::active();
  std::array<std::uint64_t, kSparsityBars> counts{};
  for (std::uint32_t i = 0; i < head.tokens; ++i) {
    ++counts[sparsity_bar(k.count_below(head.row(i), cut), head.tokens)];
  }
  SparsityDistribution dist{};
  for (std::size_t b = 0; b < kSparsityBars; ++b) dist[b] = static_cast<double>(counts[b]) / head.tokens;
  return dist;
}

MajorTokens major_token_count(std::span<const float> row) {
  check_row(row);
  std::vector<float> sorted(row.begin(), row.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double running = 0.0;
  for (std::size_t m = 0; m < sorted.size(); ++m) {
    running += static_cast<double>(sorted[m]);
    if (running >= 0.5) return MajorTokens{static_cast<std::uint32_t>(m + 1), false};
  }
  return MajorTokens{static_cast<std::uint32_t>(row.size()), true};
}

MajorTokenStats head_major_stats(const HeadView& head) {
  check_head(head);
  std::vector<std::uint32_t> counts(head.tokens);
  MajorTokenStats stats;
  for (std::uint32_t i = 0; i < head.tokens; ++i) {
    const MajorTokens m = major_token_count(head.row(i));
    counts[i] = m.count;
    stats.over_pruned_rows += m.over_pruned ? 1 : 0;
  }
  const auto s = population_stats<std::uint32_t>(counts);
  stats.mean = s.mean;
  stats.std = s.std;
  return stats;
}

std::uint32_t c50_bin_index(const RowHistogram& histogram) {
  // 2 * cumulative_count >= total is the exact form of cumulative >= 0.5.
  std::uint64_t running = 0;
  for (std::size_t b = 0; b < histogram.counts.size(); ++b) {
    running += histogram.counts[b];
    if (2 * running >= histogram.total) return static_cast<std::uint32_t>(b);
  }
  return static_cast<std::uint32_t>(histogram.counts.size() - 1);
}

std::uint32_t c50_bin_index(std::span<const float> row, const HistogramSpec& spec) {
  return c50_bin_index(row_histogram(row, spec));
}

double dispersion(const HeadView& head, const HistogramSpec& spec) {
  check_head(head);
  const HistogramBinner binner(spec);
  std::vector<std::uint32_t> c50(head.tokens);
  for (std::uint32_t i = 0; i < head.tokens; ++i) c50[i] = c50_bin_index(row_histogram(head.row(i), binner));
  return population_stats<std::uint32_t>(c50).std;
}

std::vector<std::uint32_t> outliers_from_c50(std::span<const std::uint32_t> c50, std::uint32_t deviation_bins) {
  if (c50.empty()) return {};
  if (deviation_bins < 1) throw Error(Errc::invalid_argument, "outlier deviation must be at least one bin");
  std::vector<std::uint32_t> sorted(c50.begin(), c50.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  const double median = sorted.size() % 2 == 1
                            ? static_cast<double>(sorted[mid])
                            : (static_cast<double>(sorted[mid - 1]) + static_cast<double>(sorted[mid])) / 2.0;
  std::vector<std::uint32_t> ids;
  for (std::size_t i = 0; i < c50.size(); ++i) {
    if (std::abs(static_cast<double>(c50[i]) - median) > static_cast<double>(deviation_bins)) {
      ids.push_back(static_cast<std::uint32_t>(i));
    }
  }
  return ids;
}

std::vector<std::uint32_t> outlier_tokens(const HeadView& head, const HistogramSpec& spec,
                                          std::uint32_t deviation_bins) {
  check_head(head);
  const HistogramBinner binner(spec);
  std::vector<std::uint32_t> c50(head.tokens);
  for (std::uint32_t i = 0; i < head.tokens; ++i) c50[i] = c50_bin_index(row_histogram(head.row(i), binner));
  return outliers_from_c50(c50, deviation_bins);
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw Error(Errc::shape_mismatch, fmt::format("JSD inputs differ in length ({} vs {})", p.size(), q.size()));
  }
  double sum_p = 0.0;
  double sum_q = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0) || !(q[i] >= 0.0)) {
      throw Error(Errc::invalid_argument, fmt::format("JSD densities must be non-negative (index {})", i));
    }
    sum_p += p[i];
    sum_q += q[i];
  }
  if (std::abs(sum_p - 1.0) > 1e-6 || std::abs(sum_q - 1.0) > 1e-6) {
    throw Error(Errc::invalid_argument, fmt::format("JSD densities must sum to 1 (got {} and {})", sum_p, sum_q));
  }
  double kl_p = 0.0;
  double kl_q = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) kl_p += p[i] * std::log2(p[i] / m);
    if (q[i] > 0.0) kl_q += q[i] * std::log2(q[i] / m);
  }
  return std::clamp(0.5 * kl_p + 0.5 * kl_q, 0.0, 1.0);
}

double histogram_divergence(const AttentionTensor& original, const AttentionTensor& transformed,
                            const HistogramSpec& hist) {
  if (original.layers() != transformed.layers() || original.heads() != transformed.heads() ||
      original.tokens() != transformed.tokens()) {
    throw Error(Errc::shape_mismatch, "histogram_divergence: tensors differ in shape");
  }
  const HistogramBinner binner(hist);
  const std::uint32_t n = original.tokens();
  std::vector<double> per_head(original.head_count(), 0.0);
  parallel_for(original.head_count(), [&](std::size_t h) {
    const auto layer = static_cast<std::uint32_t>(h / original.heads());
    const auto head = static_cast<std::uint32_t>(h % original.heads());
    double acc = 0.0;
    for (std::uint32_t i = 0; i < n; ++i) {
      const RowHistogram a = row_histogram(original.row(layer, head, i), binner);
      const RowHistogram b = row_histogram(transformed.row(layer, head, i), binner);
      acc += js_divergence(a.density, b.density);
    }
    per_head[h] = acc;
  });
  const double total = std::accumulate(per_head.begin(), per_head.end(), 0.0);
  return total / static_cast<double>(original.row_count());
}

double quantization_divergence(const AttentionTensor& tensor, const QuantSpec& spec, const HistogramSpec& hist) {
  const auto [quantized, codebook] = quantize_tensor(tensor, spec);
  return histogram_divergence(tensor, quantized, hist);
}

HeadProfile profile_head(std::span<const HeadView> views, std::uint32_t layer, std::uint32_t head,
                         const ProfileOptions& options) {
  if (views.empty()) throw Error(Errc::invalid_argument, "profile_head needs at least one head view");
  if (!(options.epsilon > 0.0 && options.epsilon < 1.0)) {
    throw Error(Errc::invalid_argument, fmt::format("sparsity epsilon must be in (0, 1) (got {})", options.epsilon));
  }
  const HistogramBinner binner(options.histogram);
  const float cut = kernels::float_cut(options.epsilon);
  const auto& k = kernels::active();

  HeadProfile p;
  p.layer = layer;
  p.head = head;
  std::vector<std::uint64_t> pooled(binner.bin_count(), 0);
  std::vector<std::uint32_t> major;
  std::array<std::uint64_t, kSparsityBars> bars{};
  std::uint64_t below_total = 0;
  std::uint64_t value_total = 0;

  for (const HeadView& view : views) {
    check_head(view);
    for (std::uint32_t i = 0; i < view.tokens; ++i) {
      const auto row = view.row(i);
      const RowHistogram h = row_histogram(row, binner);
      for (std::size_t b = 0; b < pooled.size(); ++b) pooled[b] += h.counts[b];
      if (options.keep_row_histograms) p.row_counts.insert(p.row_counts.end(), h.counts.begin(), h.counts.end());
      p.c50_indices.push_back(c50_bin_index(h));

      const std::uint64_t below = k.count_below(row, cut);
      below_total += below;
      value_total += row.size();
      p.row_sparsity.push_back(static_cast<double>(below) / static_cast<double>(row.size()));
      ++bars[sparsity_bar(below, row.size())];

      const MajorTokens m = major_token_count(row);
      major.push_back(m.count);
      p.over_pruned_rows += m.over_pruned ? 1 : 0;
    }
  }

  p.rows = static_cast<std::uint32_t>(p.c50_indices.size());
  p.histogram = histogram_from_counts(std::move(pooled));
  for (std::size_t b = 0; b < kSparsityBars; ++b) p.sparsity_distribution[b] = static_cast<double>(bars[b]) / p.rows;
  p.values_below = below_total;
  p.values_total = value_total;
  p.sparsity = static_cast<double>(below_total) / static_cast<double>(value_total);
  const auto ms = population_stats<std::uint32_t>(major);
  p.major_token_mean = ms.mean;
  p.major_token_std = ms.std;
  p.dispersion = population_stats<std::uint32_t>(p.c50_indices).std;
  p.outlier_token_ids = outliers_from_c50(p.c50_indices, options.outlier_deviation_bins);
  return p;
}

namespace {

ProfileReport assemble(std::span<const AttentionTensor> tensors, const ProfileOptions& options) {
  options.histogram.validate();
  ProfileReport report;
  report.options = options;
  report.instances = static_cast<std::uint32_t>(tensors.size());
  report.layers = tensors.front().layers();
  report.heads_per_layer = tensors.front().heads();
  for (const AttentionTensor& t : tensors) {
    if (t.layers() != report.layers || t.heads() != report.heads_per_layer) {
      throw Error(Errc::shape_mismatch,
                  fmt::format("cannot pool a {}x{} tensor with {}x{} tensors", t.layers(), t.heads(), report.layers,
                              report.heads_per_layer));
    }
  }
  const std::size_t head_count = std::size_t{report.layers} * report.heads_per_layer;
  report.heads.resize(head_count);
  parallel_for(head_count, [&](std::size_t h) {
    const auto layer = static_cast<std::uint32_t>(h / report.heads_per_layer);
    const auto head = static_cast<std::uint32_t>(h % report.heads_per_layer);
    std::vector<HeadView> views;
    views.reserve(tensors.size());
    for (const AttentionTensor& t : tensors) views.push_back(t.head(layer, head));
    report.heads[h] = profile_head(views, layer, head, options);
  });

  std::uint64_t values = 0;
  std::uint64_t below = 0;
  for (const HeadProfile& p : report.heads) {
    below += p.values_below;
    values += p.values_total;
    report.mean_major_tokens += p.major_token_mean;
    report.mean_dispersion += p.dispersion;
  }
  report.sparsity = static_cast<double>(below) / static_cast<double>(values);
  report.mean_major_tokens /= static_cast<double>(head_count);
  report.mean_dispersion /= static_cast<double>(head_count);
  return report;
}

}  // namespace

ProfileReport profile_tensor(const AttentionTensor& tensor, const ProfileOptions& options) {
  if (tensor.empty()) throw Error(Errc::invalid_argument, "cannot profile an empty tensor");
  return assemble(std::span<const AttentionTensor>(&tensor, 1), options);
}

ProfileReport profile_pooled(std::span<const AttentionTensor> tensors, const ProfileOptions& options) {
  if (tensors.empty()) throw Error(Errc::invalid_argument, "cannot profile an empty tensor set");
  ProfileReport report = assemble(tensors, options);
  report.pooled = true;
  return report;
}

}  // namespace attnsqueeze
