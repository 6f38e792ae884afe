#include "kvlab/surgeon.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "kvlab/corpus.hpp"
#include "kvlab/util.hpp"

namespace kvlab {

void SwapConfig::validate() const {
  bool has_frac = swap_token_fraction >= 0.0;
  bool has_abs = swap_token_absolute >= 0;
  if (has_frac == has_abs) {
    throw std::invalid_argument("SwapConfig: set exactly one of swap_token_fraction / swap_token_absolute");
  }
  if (has_frac && (swap_token_fraction <= 0.0 || swap_token_fraction >= 1.0)) {
    throw std::invalid_argument("SwapConfig: swap_token_fraction must be in (0,1)");
  }
  if (has_abs && swap_token_absolute < 1) {
    throw std::invalid_argument("SwapConfig: swap_token_absolute must be >= 1");
  }
  if (swap_percent <= 0.0 || swap_percent > 1.0) {
    throw std::invalid_argument("SwapConfig: swap_percent must be in (0,1]");
  }
  if (layers_affect_percent <= 0.0 || layers_affect_percent > 1.0) {
    throw std::invalid_argument("SwapConfig: layers_affect_percent must be in (0,1]");
  }
}

int SwapConfig::resolve_swap_step(int max_length) const {
  validate();
  int step = swap_token_absolute >= 0 ? swap_token_absolute
                                      : static_cast<int>(std::floor(swap_token_fraction * max_length));
  if (step < 1 || step >= max_length) {
    throw std::invalid_argument("SwapConfig: resolved swap step " + std::to_string(step) +
                                " outside [1, max_length) with max_length " + std::to_string(max_length));
  }
  return step;
}

SwapPlan plan_swap(int cache_length, int n_layers, const SwapConfig& cfg, int generated_count) {
  cfg.validate();
  if (cache_length < 1 || n_layers < 1) {
    throw std::invalid_argument("plan_swap: cache_length and n_layers must be >= 1");
  }
  int basis = cache_length;
  if (!cfg.count_prompt_in_block_basis) {
    if (generated_count < 0 || generated_count > cache_length) {
      throw std::invalid_argument("plan_swap: generated_count required when the prompt is excluded");
    }
    basis = generated_count;
  }
  SwapPlan plan;
  plan.cache_length = cache_length;
  plan.block_len = static_cast<int>(std::floor(cfg.swap_percent * basis));
  plan.start = cache_length - plan.block_len;
  plan.layer_count = static_cast<int>(std::floor(cfg.layers_affect_percent * n_layers));
  plan.layer_set.reserve(static_cast<size_t>(plan.layer_count));
  if (cfg.from_beginning) {
    for (int l = 0; l < plan.layer_count; ++l) plan.layer_set.push_back(l);
  } else {
    for (int l = n_layers - plan.layer_count; l < n_layers; ++l) plan.layer_set.push_back(l);
  }
  plan.no_op = plan.block_len == 0 || plan.layer_count == 0;
  plan.clamp_to_topic_length = cfg.clamp_to_topic_length;
  return plan;
}

void apply_history_swap(KVCache& cache, const TopicCache& topic, const SwapPlan& plan) {
  if (topic.model_fingerprint != cache.model_fingerprint()) {
    throw std::invalid_argument("apply_history_swap: topic cache fingerprint " + to_hex(topic.model_fingerprint) +
                                " does not match victim cache " + to_hex(cache.model_fingerprint()));
  }
  if (plan.cache_length != cache.length()) {
    throw std::invalid_argument("apply_history_swap: plan was computed for T=" + std::to_string(plan.cache_length) +
                                " but cache has T=" + std::to_string(cache.length()));
  }
  for (int l : plan.layer_set) {
    if (l < 0 || l >= cache.n_layers()) {
      throw std::out_of_range("apply_history_swap: layer " + std::to_string(l) + " outside model of " +
                              std::to_string(cache.n_layers()));
    }
  }
  int m = plan.block_len;
  int s = plan.start;
  if (topic.cache.length() < m) {
    if (!plan.clamp_to_topic_length) {
      throw std::runtime_error("apply_history_swap: topic cache holds " + std::to_string(topic.cache.length()) +
                               " timesteps but the plan needs " + std::to_string(m));
    }
    m = topic.cache.length();
    s = plan.cache_length - m;
  }
  for (int l : plan.layer_set) {
    for (int i = 0; i < m; ++i) {
      cache.overwrite(l, s + i, topic.cache.key(l, i), topic.cache.value(l, i));
    }
  }
}

TopicCache record_topic_cache(const Model& m, const std::vector<int>& prompt_tokens, int min_length,
                              const std::string& source_prompt) {
  if (min_length < 1) {
    throw std::invalid_argument("record_topic_cache: min_length must be >= 1");
  }
  int needed = min_length - static_cast<int>(prompt_tokens.size());
  if (static_cast<int>(prompt_tokens.size()) + std::max(needed, 0) > m.cfg.max_seq) {
    throw std::invalid_argument("record_topic_cache: min_length " + std::to_string(min_length) +
                                " cannot fit in max_seq " + std::to_string(m.cfg.max_seq));
  }
  TopicCache tc;
  tc.source_prompt = source_prompt;
  tc.prompt_tokens = prompt_tokens;
  tc.model_fingerprint = m.fingerprint();
  if (needed <= 0) {
    KVCache cache = m.new_cache();
    for (int tok : prompt_tokens) {
      decode_step(m, cache, tok);
    }
    tc.cache = std::move(cache);
    return tc;
  }
  // greedy continuation with EOS masked so the cache is guaranteed to reach
  // min_length timesteps
  Sampler s;
  s.mode = SampleMode::Greedy;
  s.min_tokens = needed;
  KVCache cache = m.new_cache();
  generate(m, prompt_tokens, s, needed, &cache);
  if (cache.length() < min_length) {
    throw std::runtime_error("record_topic_cache: produced only " + std::to_string(cache.length()) +
                             " of " + std::to_string(min_length) + " timesteps");
  }
  tc.cache = std::move(cache);
  return tc;
}

GenerationTrace generate_with_attack(const Model& m, const std::vector<int>& prompt, const TopicCache& topic,
                                     const SwapConfig& cfg, const Sampler& sampler, int max_length,
                                     SwapPlan* applied_plan, KVCache* out_cache) {
  int swap_step = cfg.resolve_swap_step(max_length);
  if (topic.model_fingerprint != m.fingerprint()) {
    throw std::invalid_argument("generate_with_attack: topic cache was recorded on a different model");
  }
  std::optional<int> applied_at;
  SwapPlan plan;
  StepHook hook = [&](int step, KVCache& cache) {
    if (step != swap_step) return;
    plan = plan_swap(cache.length(), m.cfg.n_layers, cfg, step);
    apply_history_swap(cache, topic, plan);
    applied_at = step;
  };
  GenerationTrace trace = generate(m, prompt, sampler, max_length, out_cache, hook);
  trace.swap_applied_at = applied_at;
  if (applied_plan != nullptr && applied_at.has_value()) {
    *applied_plan = plan;
  }
  return trace;
}

namespace {

constexpr char kTopicMagic[8] = {'K', 'V', 'T', 'C', 'A', 'C', 'H', '1'};

void put_bytes(std::string& buf, const void* p, size_t n) {
  buf.append(static_cast<const char*>(p), n);
}

template <typename T>
void put_pod(std::string& buf, T v) {
  put_bytes(buf, &v, sizeof(T));
}

}  // namespace

void save_topic_cache(const std::filesystem::path& path, const TopicCache& tc) {
  std::string buf;
  put_bytes(buf, kTopicMagic, sizeof(kTopicMagic));
  put_pod<uint64_t>(buf, tc.model_fingerprint);
  put_pod<uint32_t>(buf, static_cast<uint32_t>(tc.source_prompt.size()));
  put_bytes(buf, tc.source_prompt.data(), tc.source_prompt.size());
  put_pod<uint32_t>(buf, static_cast<uint32_t>(tc.prompt_tokens.size()));
  for (int id : tc.prompt_tokens) {
    put_pod<int32_t>(buf, id);
  }
  const KVCache& c = tc.cache;
  put_pod<int32_t>(buf, c.n_layers());
  put_pod<int32_t>(buf, c.n_heads());
  put_pod<int32_t>(buf, c.head_dim());
  put_pod<int32_t>(buf, c.max_seq());
  put_pod<int32_t>(buf, c.length());
  for (int l = 0; l < c.n_layers(); ++l) {
    for (int t = 0; t < c.length(); ++t) {
      put_bytes(buf, c.key(l, t).data(), c.key(l, t).size() * sizeof(double));
      put_bytes(buf, c.value(l, t).data(), c.value(l, t).size() * sizeof(double));
    }
  }
  put_pod<uint64_t>(buf, fnv1a64(buf.data(), buf.size()));
  write_file_atomic(path, buf);
}

TopicCache load_topic_cache(const std::filesystem::path& path) {
  std::string data = read_file(path);
  size_t pos = 0;
  auto need = [&](size_t n) {
    if (pos + n > data.size()) {
      throw std::runtime_error("topic cache: truncated file " + path.string());
    }
  };
  auto get_bytes = [&](void* p, size_t n) {
    need(n);
    std::memcpy(p, data.data() + pos, n);
    pos += n;
  };
  auto get_i32 = [&]() {
    int32_t v;
    get_bytes(&v, sizeof(v));
    return v;
  };
  auto get_u32 = [&]() {
    uint32_t v;
    get_bytes(&v, sizeof(v));
    return v;
  };
  auto get_u64 = [&]() {
    uint64_t v;
    get_bytes(&v, sizeof(v));
    return v;
  };

  char magic[8];
  get_bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kTopicMagic, sizeof(kTopicMagic)) != 0) {
    throw std::runtime_error("topic cache: bad magic in " + path.string());
  }
  TopicCache tc;
  tc.model_fingerprint = get_u64();
  auto prompt_len = get_u32();
  tc.source_prompt.resize(prompt_len);
  get_bytes(tc.source_prompt.data(), prompt_len);
  auto n_tokens = get_u32();
  tc.prompt_tokens.reserve(n_tokens);
  for (uint32_t i = 0; i < n_tokens; ++i) {
    tc.prompt_tokens.push_back(get_i32());
  }
  int n_layers = get_i32();
  int n_heads = get_i32();
  int head_dim = get_i32();
  int max_seq = get_i32();
  int length = get_i32();
  KVCache cache(n_layers, n_heads, head_dim, max_seq, tc.model_fingerprint);
  size_t dim = static_cast<size_t>(n_heads) * static_cast<size_t>(head_dim);
  for (int l = 0; l < n_layers; ++l) {
    for (int t = 0; t < length; ++t) {
      std::vector<double> k(dim), v(dim);
      get_bytes(k.data(), dim * sizeof(double));
      get_bytes(v.data(), dim * sizeof(double));
      cache.append(l, std::move(k), std::move(v));
    }
  }
  tc.cache = std::move(cache);

  size_t payload = pos;
  auto stored = get_u64();
  if (stored != fnv1a64(data.data(), payload)) {
    throw std::runtime_error("topic cache: checksum mismatch in " + path.string());
  }
  return tc;
}

}  // namespace kvlab
