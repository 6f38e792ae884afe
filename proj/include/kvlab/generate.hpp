#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "kvlab/model.hpp"

namespace kvlab {

enum class SampleMode { Greedy, Temperature };

struct Sampler {
  SampleMode mode = SampleMode::Greedy;
  double temperature = 1.0;  // > 0
  double top_p = 1.0;        // (0, 1]
  uint64_t rng_seed = 0;
  // EOS is masked while fewer than min_tokens have been generated. The
  // synthetic corpora put EOS after every sentence, so experiment runs set
  // this to the target length (the analog of min_new_tokens in real serving
  // stacks); 0 keeps the plain stop-at-EOS behavior.
  int min_tokens = 0;

  void validate() const;
};

enum class EndReason { Eos, MaxLength };

struct GenerationTrace {
  std::vector<int> prompt_tokens;
  std::vector<int> output_tokens;
  std::optional<int> swap_applied_at;  // 1-based generation step
  EndReason ended_by = EndReason::MaxLength;

  int realized_length() const { return static_cast<int>(output_tokens.size()); }
};

// Called after the cache update of step t (1-based); the attack path uses it
// to mutate the cache mid-generation.
using StepHook = std::function<void(int step, KVCache& cache)>;

// Autoregressive decoding: prefill the prompt, then sample up to max_length
// tokens, stopping early at EOS. The final cache state is written to
// *out_cache when provided.
GenerationTrace generate(const Model& m, const std::vector<int>& prompt, const Sampler& sampler,
                         int max_length, KVCache* out_cache = nullptr, const StepHook& hook = nullptr);

// Deterministic trace file (JSON). Round-trips exactly.
void save_trace(const std::filesystem::path& path, const GenerationTrace& trace);
GenerationTrace load_trace(const std::filesystem::path& path);
std::string trace_to_json(const GenerationTrace& trace);

}  // namespace kvlab
