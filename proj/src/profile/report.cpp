#include "attnsqueeze/report.hpp"

#include <fmt/format.h>

#include <cmath>
#include <cstdlib>

namespace attnsqueeze {
namespace {

nlohmann::json rounded(std::span<const double> xs) {
  nlohmann::json arr = nlohmann::json::array();
  for (double x : xs) arr.push_back(round_significant(x));
  return arr;
}

}  // namespace

double round_significant(double value, int digits) {
  if (!std::isfinite(value) || value == 0.0) return value;
  return std::strtod(fmt::format("{:.{}g}", value, digits).c_str(), nullptr);
}

std::string format_number(double value) { return fmt::format("{:.9g}", value); }

nlohmann::json to_json(const ProfileReport& report, const std::vector<std::string>& tokens) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["model"] = report.model;
  j["instance_id"] = report.instance_id;
  j["mode"] = report.pooled ? "pooled" : "single";
  j["instances"] = report.instances;
  j["layers"] = report.layers;
  j["heads"] = report.heads_per_layer;
  j["epsilon"] = round_significant(report.options.epsilon);
  j["histogram_spec"] = to_json(report.options.histogram);
  j["outlier_deviation_bins"] = report.options.outlier_deviation_bins;

  const std::vector<float> edges = report.options.histogram.edges();
  nlohmann::json edge_list = nlohmann::json::array();
  for (float e : edges) edge_list.push_back(round_significant(static_cast<double>(e)));
  j["histogram_edges"] = edge_list;

  j["global"] = {{"sparsity", round_significant(report.sparsity)},
                 {"mean_major_tokens", round_significant(report.mean_major_tokens)},
                 {"mean_dispersion", round_significant(report.mean_dispersion)}};

  nlohmann::json heads = nlohmann::json::array();
  for (const HeadProfile& p : report.heads) {
    nlohmann::json h;
    h["layer"] = p.layer;
    h["head"] = p.head;
    h["rows"] = p.rows;
    h["sparsity"] = round_significant(p.sparsity);
    h["sparsity_distribution"] = rounded(p.sparsity_distribution);
    h["major_token_mean"] = round_significant(p.major_token_mean);
    h["major_token_std"] = round_significant(p.major_token_std);
    h["over_pruned_rows"] = p.over_pruned_rows;
    h["dispersion"] = round_significant(p.dispersion);
    h["c50_indices"] = p.c50_indices;
    h["outlier_token_ids"] = p.outlier_token_ids;
    if (!tokens.empty()) {
      nlohmann::json names = nlohmann::json::array();
      for (std::uint32_t id : p.outlier_token_ids) names.push_back(id < tokens.size() ? tokens[id] : "");
      h["outlier_tokens"] = names;
    }
    h["histogram"] = {{"counts", p.histogram.counts},
                      {"density", rounded(p.histogram.density)},
                      {"cumulative", rounded(p.histogram.cumulative)}};
    if (!p.row_counts.empty()) {
      nlohmann::json rows = nlohmann::json::array();
      const std::size_t bins = edges.size();
      for (std::size_t r = 0; r < p.rows; ++r) {
        rows.push_back(std::vector<std::uint64_t>(p.row_counts.begin() + static_cast<std::ptrdiff_t>(r * bins),
                                                  p.row_counts.begin() + static_cast<std::ptrdiff_t>((r + 1) * bins)));
      }
      h["row_histograms"] = rows;
    }
    heads.push_back(std::move(h));
  }
  j["head_profiles"] = heads;
  return j;
}

std::string head_histogram_csv(const HeadProfile& head, const HistogramSpec& spec) {
  const std::vector<float> edges = spec.edges();
  std::string out = "bin_lower,bin_upper,density,cumulative\n";
  for (std::size_t b = 0; b < head.histogram.counts.size(); ++b) {
    const double lower = b == 0 ? 0.0 : static_cast<double>(edges[b - 1]);
    const double upper = static_cast<double>(edges[b == 0 ? 0 : b]);
    out += fmt::format("{},{},{},{}\n", format_number(lower), format_number(upper),
                       format_number(head.histogram.density[b]), format_number(head.histogram.cumulative[b]));
  }
  return out;
}

std::string sparsity_distribution_csv(const ProfileReport& report) {
  std::string out = "layer,head,bar_lower,bar_upper,density\n";
  for (const HeadProfile& p : report.heads) {
    for (std::size_t b = 0; b < kSparsityBars; ++b) {
      out += fmt::format("{},{},{},{},{}\n", p.layer, p.head, format_number(b / 10.0), format_number((b + 1) / 10.0),
                         format_number(p.sparsity_distribution[b]));
    }
  }
  return out;
}

}  // namespace attnsqueeze
