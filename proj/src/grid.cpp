#include "kvlab/grid.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "kvlab/util.hpp"

namespace kvlab {

void GridSpec::validate() const {
  if (models.empty() || swap_token_fractions.empty() || swap_percents.empty() || layer_configs.empty() ||
      max_lengths.empty() || seeds.empty()) {
    throw std::invalid_argument("GridSpec: every dimension needs at least one value");
  }
  if (min_tokens_fraction < 0.0 || min_tokens_fraction > 1.0) {
    throw std::invalid_argument("GridSpec: min_tokens_fraction must be in [0,1]");
  }
}

namespace {

std::string format_fraction(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::vector<LayerConfig> dedup_layers(const std::vector<LayerConfig>& in) {
  std::vector<LayerConfig> out;
  bool seen_full = false;
  for (LayerConfig lc : in) {
    if (lc.layers_affect_percent == 1.0) {
      if (seen_full) continue;
      seen_full = true;
      lc.from_beginning = false;  // canonical form; the flag is irrelevant at 100%
    }
    if (std::find(out.begin(), out.end(), lc) == out.end()) {
      out.push_back(lc);
    }
  }
  return out;
}

}  // namespace

std::vector<ResolvedRunConfig> enumerate_grid(const GridSpec& spec) {
  spec.validate();
  std::vector<LayerConfig> layers = dedup_layers(spec.layer_configs);
  std::vector<ResolvedRunConfig> out;
  int index = 0;
  for (size_t mi = 0; mi < spec.models.size(); ++mi) {
    for (int len : spec.max_lengths) {
      for (double st : spec.swap_token_fractions) {
        for (double sp : spec.swap_percents) {
          for (const LayerConfig& lc : layers) {
            for (uint64_t seed : spec.seeds) {
              ResolvedRunConfig rc;
              rc.index = index++;
              rc.model_name = spec.models[mi];
              rc.model_index = static_cast<int>(mi);
              rc.max_length = len;
              rc.swap_token_fraction = st;
              rc.swap_percent = sp;
              rc.layer = lc;
              rc.seed = seed;
              char id[160];
              std::snprintf(id, sizeof(id), "r%04d_m%d_len%d_st%s_sp%s_ly%s%s_s%llu", rc.index,
                            rc.model_index, len, format_fraction(st).c_str(), format_fraction(sp).c_str(),
                            format_fraction(lc.layers_affect_percent).c_str(), lc.from_beginning ? "b" : "e",
                            static_cast<unsigned long long>(seed));
              rc.id = id;
              out.push_back(std::move(rc));
            }
          }
        }
      }
    }
  }
  return out;
}

RunRecord run_config(const ResolvedRunConfig& rc, const ModelAssets& assets, const GridSpec& spec) {
  RunRecord rec;
  rec.config = rc;
  auto t0 = std::chrono::steady_clock::now();
  try {
    Sampler sampler;
    sampler.mode = spec.sampler_mode;
    sampler.temperature = spec.temperature;
    sampler.top_p = spec.top_p;
    sampler.rng_seed = rc.seed;
    sampler.min_tokens = static_cast<int>(std::floor(spec.min_tokens_fraction * rc.max_length));

    SwapConfig cfg;
    cfg.swap_token_fraction = rc.swap_token_fraction;
    cfg.swap_percent = rc.swap_percent;
    cfg.layers_affect_percent = rc.layer.layers_affect_percent;
    cfg.from_beginning = rc.layer.from_beginning;

    rec.attacked = generate_with_attack(*assets.model, assets.user_prompt_tokens, *assets.topic, cfg, sampler,
                                        rc.max_length, &rec.plan);
    rec.control = generate(*assets.model, assets.user_prompt_tokens, sampler, rc.max_length);

    rec.series = assets.analyzer->analyze(rec.attacked.output_tokens, rec.attacked.swap_applied_at);
    if (rec.attacked.swap_applied_at.has_value()) {
      rec.outcome = classify_outcome(rec.series, rec.attacked.output_tokens, assets.attack_is_topic_b,
                                     spec.thresholds);
      DriftSeries control_series = assets.analyzer->analyze(rec.control.output_tokens, rec.attacked.swap_applied_at);
      rec.control_outcome = classify_outcome(control_series, rec.control.output_tokens, assets.attack_is_topic_b,
                                             spec.thresholds);
    } else {
      // EOS arrived before the trigger: nothing was swapped
      rec.outcome.label = Outcome::NoDeviation;
      rec.outcome.thresholds = spec.thresholds;
      rec.control_outcome = rec.outcome;
    }
  } catch (const std::exception& e) {
    rec.failed = true;
    rec.error = e.what();
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

namespace {

nlohmann::json trace_json(const GenerationTrace& t) {
  nlohmann::json j;
  j["prompt_tokens"] = t.prompt_tokens;
  j["output_tokens"] = t.output_tokens;
  if (t.swap_applied_at.has_value()) {
    j["swap_applied_at"] = *t.swap_applied_at;
  } else {
    j["swap_applied_at"] = nullptr;
  }
  j["ended_by"] = t.ended_by == EndReason::Eos ? "eos" : "max_length";
  j["realized_length"] = t.realized_length();
  return j;
}

GenerationTrace trace_from_json(const nlohmann::json& j) {
  GenerationTrace t;
  t.prompt_tokens = j.at("prompt_tokens").get<std::vector<int>>();
  t.output_tokens = j.at("output_tokens").get<std::vector<int>>();
  if (!j.at("swap_applied_at").is_null()) {
    t.swap_applied_at = j.at("swap_applied_at").get<int>();
  }
  t.ended_by = j.at("ended_by").get<std::string>() == "eos" ? EndReason::Eos : EndReason::MaxLength;
  return t;
}

nlohmann::json thresholds_json(const Thresholds& th) {
  return {{"collapse_repetition", th.collapse_repetition},
          {"hijack_score", th.hijack_score},
          {"sustain_windows", th.sustain_windows},
          {"immediate_window_limit", th.immediate_window_limit},
          {"repetition_ngram", th.repetition_ngram}};
}

Thresholds thresholds_from_json(const nlohmann::json& j) {
  Thresholds th;
  th.collapse_repetition = j.at("collapse_repetition").get<double>();
  th.hijack_score = j.at("hijack_score").get<double>();
  th.sustain_windows = j.at("sustain_windows").get<int>();
  th.immediate_window_limit = j.at("immediate_window_limit").get<int>();
  th.repetition_ngram = j.at("repetition_ngram").get<int>();
  return th;
}

nlohmann::json outcome_json(const OutcomeRecord& r) {
  nlohmann::json j;
  j["label"] = outcome_name(r.label);
  if (r.onset_window.has_value()) {
    j["onset_window"] = *r.onset_window;
  } else {
    j["onset_window"] = nullptr;
  }
  j["post_swap_repetition"] = r.post_swap_repetition;
  j["thresholds"] = thresholds_json(r.thresholds);
  return j;
}

Outcome outcome_from_name(const std::string& s) {
  if (s == "no_deviation") return Outcome::NoDeviation;
  if (s == "immediate_persistent") return Outcome::ImmediatePersistent;
  if (s == "partial_recovery") return Outcome::PartialRecovery;
  if (s == "delayed") return Outcome::Delayed;
  if (s == "collapse") return Outcome::Collapse;
  throw std::invalid_argument("unknown outcome label: " + s);
}

OutcomeRecord outcome_from_json(const nlohmann::json& j) {
  OutcomeRecord r;
  r.label = outcome_from_name(j.at("label").get<std::string>());
  if (!j.at("onset_window").is_null()) {
    r.onset_window = j.at("onset_window").get<int>();
  }
  r.post_swap_repetition = j.at("post_swap_repetition").get<double>();
  r.thresholds = thresholds_from_json(j.at("thresholds"));
  return r;
}

}  // namespace

std::string run_record_json(const RunRecord& r) {
  nlohmann::json j;
  j["config"] = {{"index", r.config.index},
                 {"id", r.config.id},
                 {"model_name", r.config.model_name},
                 {"model_index", r.config.model_index},
                 {"max_length", r.config.max_length},
                 {"swap_token_fraction", r.config.swap_token_fraction},
                 {"swap_percent", r.config.swap_percent},
                 {"layers_affect_percent", r.config.layer.layers_affect_percent},
                 {"from_beginning", r.config.layer.from_beginning},
                 {"seed", r.config.seed}};
  j["status"] = r.failed ? "failed" : "ok";
  j["error"] = r.error;
  j["seconds"] = r.seconds;
  if (!r.failed) {
    j["attacked"] = trace_json(r.attacked);
    j["control"] = trace_json(r.control);
    j["plan"] = {{"cache_length", r.plan.cache_length}, {"block_len", r.plan.block_len},
                 {"start", r.plan.start},               {"layer_count", r.plan.layer_count},
                 {"layer_set", r.plan.layer_set},       {"no_op", r.plan.no_op}};
    nlohmann::json windows = nlohmann::json::array();
    for (const auto& w : r.series.windows) {
      windows.push_back({{"start", w.start},
                         {"end", w.end},
                         {"cos_a", w.cos_a},
                         {"cos_b", w.cos_b},
                         {"lda_a", w.lda_a},
                         {"lda_b", w.lda_b}});
    }
    nlohmann::json pca = nlohmann::json::array();
    for (const auto& c : r.series.pca_coords) {
      pca.push_back({c[0], c[1]});
    }
    j["series"] = {{"windows", windows},
                   {"pca", pca},
                   {"window_size", r.series.window_size},
                   {"stride", r.series.stride},
                   {"swap_step", r.series.swap_step.has_value() ? nlohmann::json(*r.series.swap_step)
                                                                : nlohmann::json(nullptr)}};
    j["outcome"] = outcome_json(r.outcome);
    j["control_outcome"] = outcome_json(r.control_outcome);
  }
  return j.dump(2) + "\n";
}

RunRecord parse_run_record(const std::string& json_text) {
  auto j = nlohmann::json::parse(json_text);
  RunRecord r;
  const auto& c = j.at("config");
  r.config.index = c.at("index").get<int>();
  r.config.id = c.at("id").get<std::string>();
  r.config.model_name = c.at("model_name").get<std::string>();
  r.config.model_index = c.at("model_index").get<int>();
  r.config.max_length = c.at("max_length").get<int>();
  r.config.swap_token_fraction = c.at("swap_token_fraction").get<double>();
  r.config.swap_percent = c.at("swap_percent").get<double>();
  r.config.layer.layers_affect_percent = c.at("layers_affect_percent").get<double>();
  r.config.layer.from_beginning = c.at("from_beginning").get<bool>();
  r.config.seed = c.at("seed").get<uint64_t>();
  r.failed = j.at("status").get<std::string>() == "failed";
  r.error = j.at("error").get<std::string>();
  r.seconds = j.at("seconds").get<double>();
  if (!r.failed) {
    r.attacked = trace_from_json(j.at("attacked"));
    r.control = trace_from_json(j.at("control"));
    const auto& p = j.at("plan");
    r.plan.cache_length = p.at("cache_length").get<int>();
    r.plan.block_len = p.at("block_len").get<int>();
    r.plan.start = p.at("start").get<int>();
    r.plan.layer_count = p.at("layer_count").get<int>();
    r.plan.layer_set = p.at("layer_set").get<std::vector<int>>();
    r.plan.no_op = p.at("no_op").get<bool>();
    const auto& s = j.at("series");
    for (const auto& w : s.at("windows")) {
      DriftWindow dw;
      dw.start = w.at("start").get<int>();
      dw.end = w.at("end").get<int>();
      dw.cos_a = w.at("cos_a").get<double>();
      dw.cos_b = w.at("cos_b").get<double>();
      dw.lda_a = w.at("lda_a").get<double>();
      dw.lda_b = w.at("lda_b").get<double>();
      r.series.windows.push_back(dw);
    }
    for (const auto& pc : s.at("pca")) {
      r.series.pca_coords.push_back({pc.at(0).get<double>(), pc.at(1).get<double>()});
    }
    r.series.window_size = s.at("window_size").get<int>();
    r.series.stride = s.at("stride").get<int>();
    if (!s.at("swap_step").is_null()) {
      r.series.swap_step = s.at("swap_step").get<int>();
    }
    r.outcome = outcome_from_json(j.at("outcome"));
    r.control_outcome = outcome_from_json(j.at("control_outcome"));
  }
  return r;
}

std::vector<RunRecord> run_grid(const GridSpec& spec, const std::vector<ModelAssets>& assets,
                                const std::filesystem::path& run_dir, int n_threads) {
  spec.validate();
  if (assets.size() != spec.models.size()) {
    throw std::invalid_argument("run_grid: one ModelAssets entry per model required");
  }
  auto configs = enumerate_grid(spec);
  std::filesystem::create_directories(run_dir / "records");

  std::vector<RunRecord> records(configs.size());
  std::vector<size_t> pending;
  for (size_t i = 0; i < configs.size(); ++i) {
    auto path = run_dir / "records" / (configs[i].id + ".json");
    bool loaded = false;
    if (std::filesystem::exists(path)) {
      try {
        records[i] = parse_run_record(read_file(path));
        loaded = true;
      } catch (const std::exception&) {
        loaded = false;  // partial/corrupt record: recompute
      }
    }
    if (!loaded) {
      pending.push_back(i);
    }
  }

  std::mutex queue_mutex;
  size_t next = 0;
  auto worker = [&]() {
    for (;;) {
      size_t job;
      {
        std::lock_guard<std::mutex> lock(queue_mutex);
        if (next >= pending.size()) return;
        job = pending[next++];
      }
      RunRecord rec = run_config(configs[job], assets[static_cast<size_t>(configs[job].model_index)], spec);
      write_file_atomic(run_dir / "records" / (configs[job].id + ".json"), run_record_json(rec));
      records[job] = std::move(rec);
    }
  };

  int threads = std::max(1, n_threads);
  if (threads == 1 || pending.size() <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) {
      pool.emplace_back(worker);
    }
    for (auto& t : pool) {
      t.join();
    }
  }
  return records;
}

GridSpec grid_spec_from_json(const std::string& json_text) {
  auto j = nlohmann::json::parse(json_text);
  GridSpec s;
  s.models = j.at("models").get<std::vector<std::string>>();
  s.swap_token_fractions = j.at("swap_token_fractions").get<std::vector<double>>();
  s.swap_percents = j.at("swap_percents").get<std::vector<double>>();
  for (const auto& lc : j.at("layer_configs")) {
    s.layer_configs.push_back(
        {lc.at("layers_affect_percent").get<double>(), lc.at("from_beginning").get<bool>()});
  }
  s.max_lengths = j.at("max_lengths").get<std::vector<int>>();
  if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  if (j.contains("sampler")) {
    const auto& sm = j.at("sampler");
    s.sampler_mode = sm.value("mode", std::string("temperature")) == "greedy" ? SampleMode::Greedy
                                                                              : SampleMode::Temperature;
    s.temperature = sm.value("temperature", s.temperature);
    s.top_p = sm.value("top_p", s.top_p);
    s.min_tokens_fraction = sm.value("min_tokens_fraction", s.min_tokens_fraction);
  }
  s.user_prompt = j.value("user_prompt", s.user_prompt);
  s.topic_prompt = j.value("topic_prompt", s.topic_prompt);
  s.topic_cache_min_length = j.value("topic_cache_min_length", s.topic_cache_min_length);
  if (j.contains("thresholds")) {
    s.thresholds = thresholds_from_json(j.at("thresholds"));
  }
  if (j.contains("analysis")) {
    const auto& a = j.at("analysis");
    s.analyzer.window = a.value("window", s.analyzer.window);
    s.analyzer.stride = a.value("stride", s.analyzer.stride);
    s.analyzer.lda_alpha = a.value("lda_alpha", s.analyzer.lda_alpha);
    s.analyzer.lda_beta = a.value("lda_beta", s.analyzer.lda_beta);
    s.analyzer.lda_iters = a.value("lda_iters", s.analyzer.lda_iters);
    s.analyzer.lda_seed = a.value("lda_seed", s.analyzer.lda_seed);
  }
  return s;
}

std::string grid_spec_to_json(const GridSpec& s) {
  nlohmann::json j;
  j["models"] = s.models;
  j["swap_token_fractions"] = s.swap_token_fractions;
  j["swap_percents"] = s.swap_percents;
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& lc : s.layer_configs) {
    layers.push_back({{"layers_affect_percent", lc.layers_affect_percent}, {"from_beginning", lc.from_beginning}});
  }
  j["layer_configs"] = layers;
  j["max_lengths"] = s.max_lengths;
  j["seeds"] = s.seeds;
  j["sampler"] = {{"mode", s.sampler_mode == SampleMode::Greedy ? "greedy" : "temperature"},
                  {"temperature", s.temperature},
                  {"top_p", s.top_p},
                  {"min_tokens_fraction", s.min_tokens_fraction}};
  j["user_prompt"] = s.user_prompt;
  j["topic_prompt"] = s.topic_prompt;
  j["topic_cache_min_length"] = s.topic_cache_min_length;
  j["thresholds"] = thresholds_json(s.thresholds);
  j["analysis"] = {{"window", s.analyzer.window},
                   {"stride", s.analyzer.stride},
                   {"lda_alpha", s.analyzer.lda_alpha},
                   {"lda_beta", s.analyzer.lda_beta},
                   {"lda_iters", s.analyzer.lda_iters},
                   {"lda_seed", s.analyzer.lda_seed}};
  return j.dump(2) + "\n";
}

}  // namespace kvlab
