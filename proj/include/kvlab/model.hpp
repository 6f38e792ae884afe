#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kvlab/autograd.hpp"
#include "kvlab/tensor.hpp"

namespace kvlab {

enum class PosEncoding { Rope, LearnedAbsolute };

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 64;
  int head_dim = 16;
  int vocab_size = 200;
  int max_seq = 512;
  double rope_base = 10000.0;
  PosEncoding pos_encoding = PosEncoding::Rope;
  uint64_t seed = 1;
  int mlp_hidden = 0;  // 0 -> 4 * d_model

  int mlp_dim() const { return mlp_hidden > 0 ? mlp_hidden : 4 * d_model; }
  void validate() const;
};

// Per-layer, per-timestep key/value store. Entries are written once by
// decode_step (append) and may only be rewritten through overwrite(), which
// exists for the attack path.
class KVCache {
 public:
  KVCache() = default;
  KVCache(int n_layers, int n_heads, int head_dim, int max_seq, uint64_t model_fingerprint);

  int length() const;  // T; throws if layers disagree
  int n_layers() const { return static_cast<int>(keys_.size()); }
  int n_heads() const { return n_heads_; }
  int head_dim() const { return head_dim_; }
  int max_seq() const { return max_seq_; }
  int vec_dim() const { return n_heads_ * head_dim_; }
  uint64_t model_fingerprint() const { return model_fingerprint_; }

  void append(int layer, std::vector<double> k, std::vector<double> v);
  const std::vector<double>& key(int layer, int t) const { return keys_[layer][t]; }
  const std::vector<double>& value(int layer, int t) const { return values_[layer][t]; }

  // Attack surface: replaces the stored vectors at an existing timestep.
  void overwrite(int layer, int t, const std::vector<double>& k, const std::vector<double>& v);

  bool operator==(const KVCache& o) const = default;

 private:
  int n_heads_ = 0;
  int head_dim_ = 0;
  int max_seq_ = 0;
  uint64_t model_fingerprint_ = 0;
  std::vector<std::vector<std::vector<double>>> keys_;    // [layer][t][n_heads*head_dim]
  std::vector<std::vector<std::vector<double>>> values_;
};

struct LayerParams {
  Tensor2D attn_gain;  // 1 x d
  Tensor2D wq, wk, wv, wo;  // d x d
  Tensor2D mlp_gain;   // 1 x d
  Tensor2D w_up;       // d x mlp
  Tensor2D w_down;     // mlp x d
};

struct Model {
  ModelConfig cfg;
  Tensor2D tok_embed;  // vocab x d
  Tensor2D pos_embed;  // max_seq x d when LearnedAbsolute, else empty
  std::vector<LayerParams> layers;
  Tensor2D final_gain;  // 1 x d
  Tensor2D lm_head;     // d x vocab

  std::vector<Tensor2D*> params();
  std::vector<const Tensor2D*> params() const;
  std::vector<std::string> param_names() const;
  size_t param_count() const;
  uint64_t fingerprint() const;  // hash of config + all parameter values
  KVCache new_cache() const;
};

// Parameters drawn from a seeded gaussian; identical config+seed gives
// identical parameters.
Model init_model(const ModelConfig& cfg);

// Full-context causal forward pass: logits for every position. Optionally
// records the per-layer post-rotary K/V vectors into *recorded (sized and
// filled for positions 0..n-1), which is the reference for what decode_step
// caches.
Tensor2D forward_full(const Model& m, const std::vector<int>& tokens, KVCache* recorded = nullptr);

// One incremental decoding step: appends this token's K/V to every layer of
// the cache (post-rotary, at position cache.length()) and returns logits for
// the next token as a 1 x vocab tensor.
Tensor2D decode_step(const Model& m, KVCache& cache, int token);

// Tape-based forward producing the training loss node. Parameter leaves are
// supplied in Model::params() order (lifted by the caller).
Var model_loss(Tape& tape, const ModelConfig& cfg, const std::vector<Var>& param_vars,
               const std::vector<int>& inputs, const std::vector<int>& targets);

}  // namespace kvlab
