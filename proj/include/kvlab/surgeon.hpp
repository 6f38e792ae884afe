#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "kvlab/generate.hpp"
#include "kvlab/model.hpp"

namespace kvlab {

// The attack's four control parameters. Timing is given either as a fraction
// of max_length (resolved as floor(fraction * max_length)) or as an absolute
// generation step; exactly one must be set.
struct SwapConfig {
  double swap_token_fraction = -1.0;  // (0,1) when used
  int swap_token_absolute = -1;       // >= 1 when used
  double swap_percent = 0.5;          // (0,1]
  double layers_affect_percent = 1.0;  // (0,1]
  bool from_beginning = false;
  // When false, the block size is computed from generated tokens only instead
  // of the full cache length (the prompt-inclusive reading is the default).
  bool count_prompt_in_block_basis = true;
  // Opt-in: a topic cache shorter than the planned block shrinks the block to
  // the topic cache length instead of failing.
  bool clamp_to_topic_length = false;

  void validate() const;
  int resolve_swap_step(int max_length) const;  // >= 1 and < max_length
};

// Resolved overwrite geometry for one trigger point.
struct SwapPlan {
  int cache_length = 0;  // T at the trigger
  int block_len = 0;     // m = floor(swap_percent * basis)
  int start = 0;         // s = T - m
  int layer_count = 0;   // k = floor(layers_affect_percent * L)
  std::vector<int> layer_set;
  bool no_op = false;  // m == 0 or k == 0
  bool clamp_to_topic_length = false;
};

// A cache recorded from the attacker's own run of the model, plus provenance.
struct TopicCache {
  KVCache cache;
  std::string source_prompt;
  std::vector<int> prompt_tokens;
  uint64_t model_fingerprint = 0;
};

// Pure index arithmetic; generated_count is only consulted when the config
// excludes the prompt from the block basis.
SwapPlan plan_swap(int cache_length, int n_layers, const SwapConfig& cfg, int generated_count = -1);

// Overwrites the last plan.block_len timesteps of every selected layer with
// the leading block of the topic cache, bit-exactly, leaving everything else
// untouched. Errors on fingerprint mismatch, stale plans, or a too-short
// topic cache (unless the plan allows clamping).
void apply_history_swap(KVCache& cache, const TopicCache& topic, const SwapPlan& plan);

// Runs the model on the attacker prompt until the cache holds at least
// min_length timesteps and returns the recorded cache.
TopicCache record_topic_cache(const Model& m, const std::vector<int>& prompt_tokens, int min_length,
                              const std::string& source_prompt = "");

// Algorithm: decode normally; after the cache update of the resolved step,
// apply the planned overwrite once; keep decoding from the mutated cache. If
// EOS arrives first the swap never happens and the trace says so.
GenerationTrace generate_with_attack(const Model& m, const std::vector<int>& prompt, const TopicCache& topic,
                                     const SwapConfig& cfg, const Sampler& sampler, int max_length,
                                     SwapPlan* applied_plan = nullptr, KVCache* out_cache = nullptr);

// Topic cache file, bit-exact round-trip.
void save_topic_cache(const std::filesystem::path& path, const TopicCache& tc);
TopicCache load_topic_cache(const std::filesystem::path& path);

}  // namespace kvlab
