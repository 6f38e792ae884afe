#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kvlab/drift.hpp"
#include "kvlab/generate.hpp"
#include "kvlab/surgeon.hpp"

namespace kvlab {

struct LayerConfig {
  double layers_affect_percent = 1.0;
  bool from_beginning = false;

  bool operator==(const LayerConfig& o) const = default;
};

// The experiment grid: the cross product of every listed dimension, with the
// full-layer configurations deduplicated across the from_beginning flag
// (the overwrite touches every layer either way).
struct GridSpec {
  std::vector<std::string> models;
  std::vector<double> swap_token_fractions;
  std::vector<double> swap_percents;
  std::vector<LayerConfig> layer_configs;
  std::vector<int> max_lengths;
  std::vector<uint64_t> seeds = {1};

  SampleMode sampler_mode = SampleMode::Temperature;
  double temperature = 0.8;
  double top_p = 0.95;
  // min_tokens per run = floor(fraction * max_length); 1.0 pins every run to
  // its target length so drift windows always exist.
  double min_tokens_fraction = 1.0;

  std::string user_prompt;
  std::string topic_prompt;
  int topic_cache_min_length = 160;

  Thresholds thresholds;
  AnalyzerConfig analyzer;

  void validate() const;
};

struct ResolvedRunConfig {
  int index = 0;
  std::string id;
  std::string model_name;
  int model_index = 0;
  int max_length = 0;
  double swap_token_fraction = 0.0;
  double swap_percent = 0.0;
  LayerConfig layer;
  uint64_t seed = 0;
};

std::vector<ResolvedRunConfig> enumerate_grid(const GridSpec& spec);

// Everything one run needs, shared immutably across the grid's threads.
struct ModelAssets {
  const Model* model = nullptr;
  const TopicCache* topic = nullptr;
  const DriftAnalyzer* analyzer = nullptr;
  std::vector<int> user_prompt_tokens;
  bool attack_is_topic_b = true;  // the attack topic is corpus B by default
};

struct RunRecord {
  ResolvedRunConfig config;
  bool failed = false;
  std::string error;
  GenerationTrace attacked;
  GenerationTrace control;
  SwapPlan plan;
  DriftSeries series;
  OutcomeRecord outcome;
  OutcomeRecord control_outcome;
  double seconds = 0.0;
};

// One attacked generation plus its seed-matched control, analyzed and
// classified. Component failures are captured in the record, not thrown.
RunRecord run_config(const ResolvedRunConfig& rc, const ModelAssets& assets, const GridSpec& spec);

std::string run_record_json(const RunRecord& r);
RunRecord parse_run_record(const std::string& json_text);

// Executes the whole grid into run_dir/records/, skipping configs whose
// record file already exists (resume), dispatching runs across n_threads.
// Records are returned in enumeration order.
std::vector<RunRecord> run_grid(const GridSpec& spec, const std::vector<ModelAssets>& assets,
                                const std::filesystem::path& run_dir, int n_threads = 1);

GridSpec grid_spec_from_json(const std::string& json_text);
std::string grid_spec_to_json(const GridSpec& spec);

}  // namespace kvlab
