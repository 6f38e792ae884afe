#include "kvlab/report.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "kvlab/util.hpp"

namespace kvlab {

LengthStats length_stats(std::vector<int> lengths) {
  if (lengths.empty()) {
    throw std::invalid_argument("length_stats: no values");
  }
  std::sort(lengths.begin(), lengths.end());
  size_t n = lengths.size();
  auto at_q = [&](double q) { return lengths[static_cast<size_t>(q * static_cast<double>(n - 1))]; };
  LengthStats s;
  s.min_len = lengths.front();
  s.max_len = lengths.back();
  double sum = 0.0;
  for (int v : lengths) sum += v;
  s.mean = sum / static_cast<double>(n);
  s.median = at_q(0.5);
  s.p25 = at_q(0.25);
  s.p75 = at_q(0.75);
  return s;
}

std::vector<HistogramBin> length_histogram(const std::vector<int>& lengths, int n_bins) {
  if (lengths.empty() || n_bins < 1) {
    return {};
  }
  int lo = *std::min_element(lengths.begin(), lengths.end());
  int hi = *std::max_element(lengths.begin(), lengths.end()) + 1;
  int width = (hi - lo + n_bins - 1) / n_bins;
  if (width < 1) width = 1;
  std::vector<HistogramBin> bins;
  for (int b = lo; b < hi; b += width) {
    bins.push_back({b, b + width, 0});
  }
  for (int v : lengths) {
    size_t idx = static_cast<size_t>((v - lo) / width);
    bins[idx].count += 1;
  }
  return bins;
}

namespace {

bool is_hijack(Outcome o) {
  return o == Outcome::ImmediatePersistent || o == Outcome::PartialRecovery || o == Outcome::Delayed;
}

}  // namespace

AggregateReport aggregate(const std::vector<RunRecord>& records, int n_bins, const std::string& config_hash) {
  if (records.empty()) {
    throw std::invalid_argument("aggregate: no records");
  }
  AggregateReport rep;
  rep.config_hash = config_hash;
  rep.total_runs = static_cast<int>(records.size());

  std::vector<int> lengths;
  for (const RunRecord& r : records) {
    if (std::find(rep.models.begin(), rep.models.end(), r.config.model_name) == rep.models.end()) {
      rep.models.push_back(r.config.model_name);
    }
    if (std::find(rep.lengths.begin(), rep.lengths.end(), r.config.max_length) == rep.lengths.end()) {
      rep.lengths.push_back(r.config.max_length);
    }
    if (r.failed) {
      rep.failed_runs += 1;
      continue;
    }
    rep.outcome_counts[outcome_name(r.outcome.label)] += 1;
    if (is_hijack(r.outcome.label)) {
      rep.deviation_counts[r.config.model_name][r.config.max_length] += 1;
      rep.total_deviations += 1;
    }
    lengths.push_back(r.attacked.realized_length());
  }
  std::sort(rep.lengths.begin(), rep.lengths.end());
  if (!lengths.empty()) {
    rep.realized = length_stats(lengths);
    rep.histogram = length_histogram(lengths, n_bins);
  }
  return rep;
}

std::string report_text(const AggregateReport& rep) {
  std::string out;
  out += "# config_hash=" + rep.config_hash + "\n";
  out += "total_runs=" + std::to_string(rep.total_runs) + " failed=" + std::to_string(rep.failed_runs) + "\n\n";

  out += "Topic deviations (hijack outcomes) by model and target length:\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-24s", "model");
  out += buf;
  for (int len : rep.lengths) {
    std::snprintf(buf, sizeof(buf), "%10d", len);
    out += buf;
  }
  out += "     total\n";
  int grand = 0;
  for (const auto& model : rep.models) {
    std::snprintf(buf, sizeof(buf), "%-24s", model.c_str());
    out += buf;
    int row_total = 0;
    for (int len : rep.lengths) {
      int c = 0;
      auto mit = rep.deviation_counts.find(model);
      if (mit != rep.deviation_counts.end()) {
        auto lit = mit->second.find(len);
        if (lit != mit->second.end()) c = lit->second;
      }
      row_total += c;
      std::snprintf(buf, sizeof(buf), "%10d", c);
      out += buf;
    }
    grand += row_total;
    std::snprintf(buf, sizeof(buf), "%10d\n", row_total);
    out += buf;
  }
  out += "grand total deviations: " + std::to_string(grand) + "\n\n";

  out += "Outcome counts:\n";
  for (const auto& [name, count] : rep.outcome_counts) {
    out += "  " + name + ": " + std::to_string(count) + "\n";
  }
  out += "\nRealized lengths (median/p25/p75 use the lower-interpolation convention):\n";
  std::snprintf(buf, sizeof(buf), "  min=%d max=%d mean=%.2f median=%d p25=%d p75=%d\n", rep.realized.min_len,
                rep.realized.max_len, rep.realized.mean, rep.realized.median, rep.realized.p25, rep.realized.p75);
  out += buf;
  return out;
}

std::string histogram_csv(const AggregateReport& rep) {
  std::string out = "# config_hash=" + rep.config_hash + "\n";
  out += "bin_lo,bin_hi,count\n";
  for (const auto& b : rep.histogram) {
    out += std::to_string(b.lo) + "," + std::to_string(b.hi) + "," + std::to_string(b.count) + "\n";
  }
  return out;
}

std::string deviation_table_csv(const AggregateReport& rep) {
  std::string out = "# config_hash=" + rep.config_hash + "\n";
  out += "model";
  for (int len : rep.lengths) {
    out += "," + std::to_string(len);
  }
  out += ",total\n";
  for (const auto& model : rep.models) {
    out += model;
    int row_total = 0;
    for (int len : rep.lengths) {
      int c = 0;
      auto mit = rep.deviation_counts.find(model);
      if (mit != rep.deviation_counts.end()) {
        auto lit = mit->second.find(len);
        if (lit != mit->second.end()) c = lit->second;
      }
      row_total += c;
      out += "," + std::to_string(c);
    }
    out += "," + std::to_string(row_total) + "\n";
  }
  return out;
}

}  // namespace kvlab
