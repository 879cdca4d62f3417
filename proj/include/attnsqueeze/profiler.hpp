#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "attnsqueeze/quantizer.hpp"
#include "attnsqueeze/tensor.hpp"

namespace attnsqueeze {

// Log-spaced histogram over [lower_bound, 1] with an underflow bucket at
// index 0. Bin edges are binary32 (the precision attention is stored in), so
// a value exactly equal to an edge lands in the bin that edge opens.
struct HistogramSpec {
  double lower_bound = 1e-8;
  int bins_per_decade = 10;
  bool underflow_bucket = true;

  void validate() const;
  std::size_t log_bins() const;
  std::size_t bin_count() const { return log_bins() + 1; }
  // log_bins() + 1 ascending edges; edges.front() == lower_bound (as
  // binary32), edges.back() == 1.
  std::vector<float> edges() const;

  friend bool operator==(const HistogramSpec&, const HistogramSpec&) = default;
};

nlohmann::json to_json(const HistogramSpec& spec);

class HistogramBinner {
 public:
  explicit HistogramBinner(const HistogramSpec& spec);

  const HistogramSpec& spec() const noexcept { return spec_; }
  std::size_t bin_count() const noexcept { return edges_.size(); }
  std::span<const float> edges() const noexcept { return edges_; }
  // 0 for values below the lower bound; 1 + m for edges[m] <= v < edges[m+1];
  // v == 1 goes to the top bin.
  std::size_t bin_of(float v) const;

 private:
  HistogramSpec spec_;
  std::vector<float> edges_;
};

struct RowHistogram {
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;
  std::vector<double> density;
  std::vector<double> cumulative;
};

// Densities normalized by the number of counted values (the row length when
// the underflow bucket is on).
RowHistogram histogram_from_counts(std::vector<std::uint64_t> counts);

RowHistogram row_histogram(std::span<const float> row, const HistogramSpec& spec);
RowHistogram row_histogram(std::span<const float> row, const HistogramBinner& binner);

inline constexpr std::size_t kSparsityBars = 10;
using SparsityDistribution = std::array<double, kSparsityBars>;

// Histogram of per-row sparsities (fraction of values < epsilon) over ten
// uniform bins of [0, 1]; the last bin is closed.
SparsityDistribution sparsity_distribution(const HeadView& head, double epsilon = kDefaultSparsityEpsilon);
std::size_t sparsity_bar(std::uint64_t below, std::uint64_t total) noexcept;

struct MajorTokens {
  std::uint32_t count = 0;
  bool over_pruned = false;  // row sums below 0.5; count is the row length
};

// Smallest number of largest values whose sum reaches 0.5.
MajorTokens major_token_count(std::span<const float> row);

struct MajorTokenStats {
  double mean = 0.0;
  double std = 0.0;  // population
  std::uint32_t over_pruned_rows = 0;
};

MajorTokenStats head_major_stats(const HeadView& head);

// First bin (underflow = 0) where the cumulative density reaches >= 0.5.
std::uint32_t c50_bin_index(const RowHistogram& histogram);
std::uint32_t c50_bin_index(std::span<const float> row, const HistogramSpec& spec);

// Population standard deviation of the rows' c50 indices.
double dispersion(const HeadView& head, const HistogramSpec& spec);

inline constexpr std::uint32_t kDefaultOutlierDeviationBins = 10;

// Rows whose c50 index is more than deviation_bins away from the head median.
std::vector<std::uint32_t> outlier_tokens(const HeadView& head, const HistogramSpec& spec,
                                          std::uint32_t deviation_bins = kDefaultOutlierDeviationBins);
std::vector<std::uint32_t> outliers_from_c50(std::span<const std::uint32_t> c50, std::uint32_t deviation_bins);

// Base-2 Jensen-Shannon divergence, in [0, 1].
double js_divergence(std::span<const double> p, std::span<const double> q);

// Mean over rows of JSD(histogram(row), histogram(quantize(row))).
double quantization_divergence(const AttentionTensor& tensor, const QuantSpec& spec, const HistogramSpec& hist);
// Same, with the quantized tensor supplied by the caller.
double histogram_divergence(const AttentionTensor& original, const AttentionTensor& transformed,
                            const HistogramSpec& hist);

struct ProfileOptions {
  HistogramSpec histogram;
  double epsilon = kDefaultSparsityEpsilon;
  std::uint32_t outlier_deviation_bins = kDefaultOutlierDeviationBins;
  bool keep_row_histograms = false;
};

struct HeadProfile {
  std::uint32_t layer = 0;
  std::uint32_t head = 0;
  std::uint32_t rows = 0;
  RowHistogram histogram;                  // all rows of the head pooled
  std::vector<std::uint64_t> row_counts;   // rows x bins, when kept
  std::vector<std::uint32_t> c50_indices;  // per row
  std::vector<double> row_sparsity;        // per row
  SparsityDistribution sparsity_distribution{};
  double sparsity = 0.0;
  std::uint64_t values_below = 0;
  std::uint64_t values_total = 0;
  double major_token_mean = 0.0;
  double major_token_std = 0.0;
  std::uint32_t over_pruned_rows = 0;
  double dispersion = 0.0;
  std::vector<std::uint32_t> outlier_token_ids;
};

// Statistics for one head; rows of every view are pooled in order.
HeadProfile profile_head(std::span<const HeadView> views, std::uint32_t layer, std::uint32_t head,
                         const ProfileOptions& options);

struct ProfileReport {
  std::string model;
  std::string instance_id;
  bool pooled = false;
  std::uint32_t instances = 1;
  std::uint32_t layers = 0;
  std::uint32_t heads_per_layer = 0;
  ProfileOptions options;
  std::vector<HeadProfile> heads;  // layer-major
  double sparsity = 0.0;
  double mean_major_tokens = 0.0;
  double mean_dispersion = 0.0;
};

ProfileReport profile_tensor(const AttentionTensor& tensor, const ProfileOptions& options);
// All tensors must share L and H; N may differ.
ProfileReport profile_pooled(std::span<const AttentionTensor> tensors, const ProfileOptions& options);

}  // namespace attnsqueeze
