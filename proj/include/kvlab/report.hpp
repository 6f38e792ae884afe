#pragma once

#include <map>
#include <string>
#include <vector>

#include "kvlab/grid.hpp"

namespace kvlab {

// Order statistics use the lower-interpolation convention: the q-quantile of
// n sorted values is the element at index floor(q * (n - 1)), so the median
// of an even count is the lower middle.
struct LengthStats {
  int min_len = 0;
  int max_len = 0;
  double mean = 0.0;
  int median = 0;
  int p25 = 0;
  int p75 = 0;
};

LengthStats length_stats(std::vector<int> lengths);

struct HistogramBin {
  int lo = 0;  // inclusive
  int hi = 0;  // exclusive
  int count = 0;
};

std::vector<HistogramBin> length_histogram(const std::vector<int>& lengths, int n_bins = 16);

struct AggregateReport {
  int total_runs = 0;
  int failed_runs = 0;
  std::vector<std::string> models;  // table row order
  std::vector<int> lengths;         // table column order
  // topic hijacks (immediate/partial-recovery/delayed) per model x length
  std::map<std::string, std::map<int, int>> deviation_counts;
  int total_deviations = 0;
  std::map<std::string, int> outcome_counts;
  LengthStats realized;
  std::vector<HistogramBin> histogram;
  std::string config_hash;
};

AggregateReport aggregate(const std::vector<RunRecord>& records, int n_bins = 16,
                          const std::string& config_hash = "");

std::string report_text(const AggregateReport& rep);
std::string histogram_csv(const AggregateReport& rep);
std::string deviation_table_csv(const AggregateReport& rep);

}  // namespace kvlab
