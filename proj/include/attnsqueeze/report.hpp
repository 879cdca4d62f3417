#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnsqueeze/profiler.hpp"

namespace attnsqueeze {

inline constexpr int kReportSchemaVersion = 1;

// Numbers in every report and CSV carry 9 significant digits.
double round_significant(double value, int digits = 9);
std::string format_number(double value);

// `tokens` (may be empty) names rows in outlier lists.
nlohmann::json to_json(const ProfileReport& report, const std::vector<std::string>& tokens = {});

// bin_lower,bin_upper,density,cumulative for the head's pooled histogram.
std::string head_histogram_csv(const HeadProfile& head, const HistogramSpec& spec);

// layer,head,bar_lower,bar_upper,density for every head.
std::string sparsity_distribution_csv(const ProfileReport& report);

}  // namespace attnsqueeze
