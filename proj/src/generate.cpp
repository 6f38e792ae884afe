#include "kvlab/generate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "kvlab/corpus.hpp"
#include "kvlab/rng.hpp"
#include "kvlab/util.hpp"

namespace kvlab {

void Sampler::validate() const {
  if (mode == SampleMode::Temperature) {
    if (temperature <= 0.0) throw std::invalid_argument("Sampler: temperature must be > 0");
    if (top_p <= 0.0 || top_p > 1.0) throw std::invalid_argument("Sampler: top_p must be in (0,1]");
  }
  if (min_tokens < 0) throw std::invalid_argument("Sampler: min_tokens must be >= 0");
}

namespace {

int argmax_row(const Tensor2D& logits, bool mask_eos) {
  int best = -1;
  double best_v = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < logits.cols; ++j) {
    if (mask_eos && j == kEosId) continue;
    double v = logits.data[static_cast<size_t>(j)];
    if (v > best_v) {
      best_v = v;
      best = j;
    }
  }
  return best;
}

int sample_row(const Tensor2D& logits, const Sampler& s, Rng& rng, bool mask_eos) {
  if (s.mode == SampleMode::Greedy) {
    return argmax_row(logits, mask_eos);
  }
  int v = logits.cols;
  std::vector<double> scaled(static_cast<size_t>(v));
  double mx = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < v; ++j) {
    double x = logits.data[static_cast<size_t>(j)] / s.temperature;
    if (mask_eos && j == kEosId) x = -std::numeric_limits<double>::infinity();
    scaled[static_cast<size_t>(j)] = x;
    if (x > mx) mx = x;
  }
  std::vector<double> probs(static_cast<size_t>(v));
  double denom = 0.0;
  for (int j = 0; j < v; ++j) {
    double e = std::exp(scaled[static_cast<size_t>(j)] - mx);
    probs[static_cast<size_t>(j)] = e;
    denom += e;
  }
  for (double& p : probs) p /= denom;

  // nucleus: keep the smallest prefix of (prob desc, id asc) reaching top_p
  std::vector<int> order(static_cast<size_t>(v));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (probs[static_cast<size_t>(a)] != probs[static_cast<size_t>(b)]) {
      return probs[static_cast<size_t>(a)] > probs[static_cast<size_t>(b)];
    }
    return a < b;
  });
  double cum = 0.0;
  size_t keep = 0;
  for (; keep < order.size(); ++keep) {
    cum += probs[static_cast<size_t>(order[keep])];
    if (cum >= s.top_p) {
      ++keep;
      break;
    }
  }
  if (keep == 0) keep = 1;
  double u = rng.next_double() * cum;
  double acc = 0.0;
  for (size_t i = 0; i < keep; ++i) {
    acc += probs[static_cast<size_t>(order[i])];
    if (u < acc) return order[i];
  }
  return order[keep - 1];
}

}  // namespace

GenerationTrace generate(const Model& m, const std::vector<int>& prompt, const Sampler& sampler,
                         int max_length, KVCache* out_cache, const StepHook& hook) {
  sampler.validate();
  if (max_length < 0) {
    throw std::invalid_argument("generate: max_length must be >= 0");
  }
  if (static_cast<int>(prompt.size()) + max_length > m.cfg.max_seq) {
    throw std::invalid_argument("generate: prompt of " + std::to_string(prompt.size()) + " plus max_length " +
                                std::to_string(max_length) + " exceeds max_seq " + std::to_string(m.cfg.max_seq));
  }
  if (prompt.empty()) {
    throw std::invalid_argument("generate: empty prompt");
  }

  GenerationTrace trace;
  trace.prompt_tokens = prompt;
  trace.ended_by = EndReason::MaxLength;

  KVCache cache = m.new_cache();
  Tensor2D logits;
  for (int tok : prompt) {
    logits = decode_step(m, cache, tok);
  }

  Rng rng(sampler.rng_seed);
  for (int step = 1; step <= max_length; ++step) {
    bool mask_eos = step <= sampler.min_tokens;
    int token = sample_row(logits, sampler, rng, mask_eos);
    trace.output_tokens.push_back(token);
    if (token == kEosId) {
      trace.ended_by = EndReason::Eos;
      break;
    }
    logits = decode_step(m, cache, token);
    if (hook) {
      hook(step, cache);
    }
  }
  if (out_cache != nullptr) {
    *out_cache = std::move(cache);
  }
  return trace;
}

std::string trace_to_json(const GenerationTrace& trace) {
  nlohmann::json j;
  j["prompt_tokens"] = trace.prompt_tokens;
  j["output_tokens"] = trace.output_tokens;
  if (trace.swap_applied_at.has_value()) {
    j["swap_applied_at"] = *trace.swap_applied_at;
  } else {
    j["swap_applied_at"] = nullptr;
  }
  j["ended_by"] = trace.ended_by == EndReason::Eos ? "eos" : "max_length";
  j["realized_length"] = trace.realized_length();
  return j.dump(2) + "\n";
}

void save_trace(const std::filesystem::path& path, const GenerationTrace& trace) {
  write_file(path, trace_to_json(trace));
}

GenerationTrace load_trace(const std::filesystem::path& path) {
  auto j = nlohmann::json::parse(read_file(path));
  GenerationTrace t;
  t.prompt_tokens = j.at("prompt_tokens").get<std::vector<int>>();
  t.output_tokens = j.at("output_tokens").get<std::vector<int>>();
  if (!j.at("swap_applied_at").is_null()) {
    t.swap_applied_at = j.at("swap_applied_at").get<int>();
  }
  t.ended_by = j.at("ended_by").get<std::string>() == "eos" ? EndReason::Eos : EndReason::MaxLength;
  return t;
}

}  // namespace kvlab
