#include "kvlab/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "kvlab/rng.hpp"
#include "kvlab/util.hpp"

namespace kvlab {

void ModelConfig::validate() const {
  if (n_layers < 1) throw std::invalid_argument("ModelConfig: n_layers must be >= 1");
  if (n_heads < 1) throw std::invalid_argument("ModelConfig: n_heads must be >= 1");
  if (max_seq < 1) throw std::invalid_argument("ModelConfig: max_seq must be >= 1");
  if (vocab_size < 2) throw std::invalid_argument("ModelConfig: vocab_size must hold at least EOS and UNK");
  if (head_dim != 0 && d_model != n_heads * head_dim) {
    throw std::invalid_argument("ModelConfig: d_model " + std::to_string(d_model) + " != n_heads " +
                                std::to_string(n_heads) + " * head_dim " + std::to_string(head_dim));
  }
  if (head_dim == 0 && d_model % n_heads != 0) {
    throw std::invalid_argument("ModelConfig: d_model not divisible by n_heads");
  }
  int hd = head_dim != 0 ? head_dim : d_model / n_heads;
  if (pos_encoding == PosEncoding::Rope && hd % 2 != 0) {
    throw std::invalid_argument("ModelConfig: rotary encoding needs an even head_dim, got " + std::to_string(hd));
  }
  if (rope_base <= 0.0) throw std::invalid_argument("ModelConfig: rope_base must be positive");
}

KVCache::KVCache(int n_layers, int n_heads, int head_dim, int max_seq, uint64_t model_fingerprint)
    : n_heads_(n_heads),
      head_dim_(head_dim),
      max_seq_(max_seq),
      model_fingerprint_(model_fingerprint),
      keys_(static_cast<size_t>(n_layers)),
      values_(static_cast<size_t>(n_layers)) {}

int KVCache::length() const {
  if (keys_.empty()) return 0;
  size_t t = keys_[0].size();
  for (size_t l = 1; l < keys_.size(); ++l) {
    if (keys_[l].size() != t || values_[l].size() != t) {
      throw std::logic_error("KVCache: layers disagree on length");
    }
  }
  if (values_[0].size() != t) {
    throw std::logic_error("KVCache: key/value lengths disagree");
  }
  return static_cast<int>(t);
}

void KVCache::append(int layer, std::vector<double> k, std::vector<double> v) {
  if (layer < 0 || layer >= n_layers()) {
    throw std::out_of_range("KVCache::append: layer " + std::to_string(layer));
  }
  if (static_cast<int>(k.size()) != vec_dim() || static_cast<int>(v.size()) != vec_dim()) {
    throw std::invalid_argument("KVCache::append: vector size != n_heads*head_dim");
  }
  if (static_cast<int>(keys_[layer].size()) >= max_seq_) {
    throw std::runtime_error("KVCache::append: cache full at max_seq " + std::to_string(max_seq_));
  }
  keys_[layer].push_back(std::move(k));
  values_[layer].push_back(std::move(v));
}

void KVCache::overwrite(int layer, int t, const std::vector<double>& k, const std::vector<double>& v) {
  if (layer < 0 || layer >= n_layers()) {
    throw std::out_of_range("KVCache::overwrite: layer " + std::to_string(layer));
  }
  if (t < 0 || t >= static_cast<int>(keys_[layer].size())) {
    throw std::out_of_range("KVCache::overwrite: timestep " + std::to_string(t) + " beyond length " +
                            std::to_string(keys_[layer].size()));
  }
  if (static_cast<int>(k.size()) != vec_dim() || static_cast<int>(v.size()) != vec_dim()) {
    throw std::invalid_argument("KVCache::overwrite: vector size != n_heads*head_dim");
  }
  keys_[layer][t] = k;
  values_[layer][t] = v;
}

namespace {

void fill_gaussian(Tensor2D& t, Rng& rng, double std_dev) {
  for (double& v : t.data) {
    v = rng.next_gaussian() * std_dev;
  }
}

ModelConfig normalized(ModelConfig cfg) {
  cfg.validate();
  if (cfg.head_dim == 0) cfg.head_dim = cfg.d_model / cfg.n_heads;
  return cfg;
}

constexpr double kInitStd = 0.08;
constexpr double kRmsEps = 1e-6;

// Single-row kernels for the incremental decode path. The loop structure and
// operation order mirror the tape kernels exactly so both routes agree to the
// last bit on the same inputs.
std::vector<double> matvec(const std::vector<double>& x, const Tensor2D& w) {
  std::vector<double> out(static_cast<size_t>(w.cols), 0.0);
  for (int k = 0; k < w.rows; ++k) {
    double xv = x[static_cast<size_t>(k)];
    auto row = w.row(k);
    for (int j = 0; j < w.cols; ++j) {
      out[static_cast<size_t>(j)] += xv * row[j];
    }
  }
  return out;
}

std::vector<double> rms_norm_vec(const std::vector<double>& x, const Tensor2D& gain) {
  int n = static_cast<int>(x.size());
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms /= n;
  double inv = 1.0 / std::sqrt(ms + kRmsEps);
  std::vector<double> out(x.size());
  for (int j = 0; j < n; ++j) {
    out[static_cast<size_t>(j)] = x[static_cast<size_t>(j)] * inv * gain.data[static_cast<size_t>(j)];
  }
  return out;
}

void rope_vec(std::vector<double>& x, int pos, int n_heads, int head_dim, double base) {
  for (int i = 0; i < head_dim; i += 2) {
    double freq = 1.0 / std::pow(base, static_cast<double>(i) / head_dim);
    double angle = pos * freq;
    double c = std::cos(angle);
    double s = std::sin(angle);
    for (int h = 0; h < n_heads; ++h) {
      size_t off = static_cast<size_t>(h * head_dim + i);
      double v0 = x[off];
      double v1 = x[off + 1];
      x[off] = v0 * c - v1 * s;
      x[off + 1] = v0 * s + v1 * c;
    }
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct ForwardNodes {
  Var logits;
  std::vector<Var> layer_keys;    // post-rotary, one (T x d) node per layer
  std::vector<Var> layer_values;
};

ForwardNodes build_forward(Tape& t, const ModelConfig& cfg, const std::vector<Var>& pv,
                           const std::vector<int>& tokens) {
  int T = static_cast<int>(tokens.size());
  int hd = cfg.head_dim;
  size_t pi = 0;
  Var x = t.embed_rows(pv[pi++], tokens);
  if (cfg.pos_encoding == PosEncoding::LearnedAbsolute) {
    x = t.add(x, t.slice_rows(pv[pi++], 0, T));
  }
  double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  ForwardNodes out;
  for (int l = 0; l < cfg.n_layers; ++l) {
    Var attn_gain = pv[pi++];
    Var wq = pv[pi++];
    Var wk = pv[pi++];
    Var wv = pv[pi++];
    Var wo = pv[pi++];
    Var mlp_gain = pv[pi++];
    Var w_up = pv[pi++];
    Var w_down = pv[pi++];

    Var a = t.rms_norm(x, attn_gain, kRmsEps);
    Var q = t.matmul(a, wq);
    Var k = t.matmul(a, wk);
    Var v = t.matmul(a, wv);
    if (cfg.pos_encoding == PosEncoding::Rope) {
      q = t.rope(q, 0, cfg.n_heads, hd, cfg.rope_base);
      k = t.rope(k, 0, cfg.n_heads, hd, cfg.rope_base);
    }
    out.layer_keys.push_back(k);
    out.layer_values.push_back(v);

    std::vector<Var> head_outs;
    head_outs.reserve(static_cast<size_t>(cfg.n_heads));
    for (int h = 0; h < cfg.n_heads; ++h) {
      Var qh = t.slice_cols(q, h * hd, hd);
      Var kh = t.slice_cols(k, h * hd, hd);
      Var vh = t.slice_cols(v, h * hd, hd);
      Var probs = t.causal_softmax(t.scale(t.matmul_nt(qh, kh), inv_sqrt_hd));
      head_outs.push_back(t.matmul(probs, vh));
    }
    Var attn = t.matmul(t.concat_cols(head_outs), wo);
    x = t.add(x, attn);

    Var mm = t.rms_norm(x, mlp_gain, kRmsEps);
    Var h1 = t.silu(t.matmul(mm, w_up));
    x = t.add(x, t.matmul(h1, w_down));
  }
  Var f = t.rms_norm(x, pv[pi++], kRmsEps);
  out.logits = t.matmul(f, pv[pi++]);
  return out;
}

void check_tokens(const ModelConfig& cfg, const std::vector<int>& tokens) {
  if (static_cast<int>(tokens.size()) > cfg.max_seq) {
    throw std::invalid_argument("sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_seq " +
                                std::to_string(cfg.max_seq));
  }
  for (int id : tokens) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(cfg.vocab_size));
    }
  }
}

}  // namespace

std::vector<Tensor2D*> Model::params() {
  std::vector<Tensor2D*> out;
  out.push_back(&tok_embed);
  if (cfg.pos_encoding == PosEncoding::LearnedAbsolute) {
    out.push_back(&pos_embed);
  }
  for (auto& l : layers) {
    out.push_back(&l.attn_gain);
    out.push_back(&l.wq);
    out.push_back(&l.wk);
    out.push_back(&l.wv);
    out.push_back(&l.wo);
    out.push_back(&l.mlp_gain);
    out.push_back(&l.w_up);
    out.push_back(&l.w_down);
  }
  out.push_back(&final_gain);
  out.push_back(&lm_head);
  return out;
}

std::vector<const Tensor2D*> Model::params() const {
  auto mut = const_cast<Model*>(this)->params();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> Model::param_names() const {
  std::vector<std::string> out;
  out.push_back("tok_embed");
  if (cfg.pos_encoding == PosEncoding::LearnedAbsolute) {
    out.push_back("pos_embed");
  }
  for (size_t i = 0; i < layers.size(); ++i) {
    std::string p = "layer" + std::to_string(i) + ".";
    for (const char* n : {"attn_gain", "wq", "wk", "wv", "wo", "mlp_gain", "w_up", "w_down"}) {
      out.push_back(p + n);
    }
  }
  out.push_back("final_gain");
  out.push_back("lm_head");
  return out;
}

size_t Model::param_count() const {
  size_t n = 0;
  for (const Tensor2D* p : params()) {
    n += p->size();
  }
  return n;
}

uint64_t Model::fingerprint() const {
  double header[8] = {
      static_cast<double>(cfg.n_layers),  static_cast<double>(cfg.n_heads),
      static_cast<double>(cfg.d_model),   static_cast<double>(cfg.head_dim),
      static_cast<double>(cfg.vocab_size), static_cast<double>(cfg.max_seq),
      cfg.rope_base,                      static_cast<double>(static_cast<int>(cfg.pos_encoding))};
  uint64_t h = fnv1a64(header, sizeof(header));
  for (const Tensor2D* p : params()) {
    h = fnv1a64(std::span<const double>(p->data), h);
  }
  return h;
}

KVCache Model::new_cache() const {
  return KVCache(cfg.n_layers, cfg.n_heads, cfg.head_dim, cfg.max_seq, fingerprint());
}

Model init_model(const ModelConfig& raw) {
  Model m;
  m.cfg = normalized(raw);
  const ModelConfig& cfg = m.cfg;
  Rng rng(cfg.seed);

  m.tok_embed = Tensor2D(cfg.vocab_size, cfg.d_model);
  fill_gaussian(m.tok_embed, rng, kInitStd);
  if (cfg.pos_encoding == PosEncoding::LearnedAbsolute) {
    m.pos_embed = Tensor2D(cfg.max_seq, cfg.d_model);
    fill_gaussian(m.pos_embed, rng, kInitStd);
  }
  m.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& l : m.layers) {
    l.attn_gain = Tensor2D::ones(1, cfg.d_model);
    l.wq = Tensor2D(cfg.d_model, cfg.d_model);
    l.wk = Tensor2D(cfg.d_model, cfg.d_model);
    l.wv = Tensor2D(cfg.d_model, cfg.d_model);
    l.wo = Tensor2D(cfg.d_model, cfg.d_model);
    fill_gaussian(l.wq, rng, kInitStd);
    fill_gaussian(l.wk, rng, kInitStd);
    fill_gaussian(l.wv, rng, kInitStd);
    fill_gaussian(l.wo, rng, kInitStd);
    l.mlp_gain = Tensor2D::ones(1, cfg.d_model);
    l.w_up = Tensor2D(cfg.d_model, cfg.mlp_dim());
    l.w_down = Tensor2D(cfg.mlp_dim(), cfg.d_model);
    fill_gaussian(l.w_up, rng, kInitStd);
    fill_gaussian(l.w_down, rng, kInitStd);
  }
  m.final_gain = Tensor2D::ones(1, cfg.d_model);
  m.lm_head = Tensor2D(cfg.d_model, cfg.vocab_size);
  fill_gaussian(m.lm_head, rng, kInitStd);
  return m;
}

Tensor2D forward_full(const Model& m, const std::vector<int>& tokens, KVCache* recorded) {
  check_tokens(m.cfg, tokens);
  if (tokens.empty()) {
    throw std::invalid_argument("forward_full: empty token sequence");
  }
  Tape tape;
  std::vector<Var> pv;
  for (const Tensor2D* p : m.params()) {
    pv.push_back(tape.leaf(*p, /*requires_grad=*/false));
  }
  ForwardNodes nodes = build_forward(tape, m.cfg, pv, tokens);
  if (recorded != nullptr) {
    *recorded = m.new_cache();
    for (int l = 0; l < m.cfg.n_layers; ++l) {
      const Tensor2D& kmat = tape.value(nodes.layer_keys[static_cast<size_t>(l)]);
      const Tensor2D& vmat = tape.value(nodes.layer_values[static_cast<size_t>(l)]);
      for (int t = 0; t < kmat.rows; ++t) {
        auto kr = kmat.row(t);
        auto vr = vmat.row(t);
        recorded->append(l, std::vector<double>(kr.begin(), kr.end()), std::vector<double>(vr.begin(), vr.end()));
      }
    }
  }
  return tape.value(nodes.logits);
}

Tensor2D decode_step(const Model& m, KVCache& cache, int token) {
  const ModelConfig& cfg = m.cfg;
  if (token < 0 || token >= cfg.vocab_size) {
    throw std::out_of_range("decode_step: token id " + std::to_string(token) + " outside vocabulary of " +
                            std::to_string(cfg.vocab_size));
  }
  if (cache.n_layers() != cfg.n_layers || cache.vec_dim() != cfg.d_model) {
    throw std::invalid_argument("decode_step: cache shape does not match model");
  }
  int pos = cache.length();
  if (pos >= cfg.max_seq) {
    throw std::runtime_error("decode_step: cache full at max_seq " + std::to_string(cfg.max_seq));
  }

  int d = cfg.d_model;
  int hd = cfg.head_dim;
  double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<double> x(static_cast<size_t>(d));
  auto emb = m.tok_embed.row(token);
  std::copy(emb.begin(), emb.end(), x.begin());
  if (cfg.pos_encoding == PosEncoding::LearnedAbsolute) {
    auto pe = m.pos_embed.row(pos);
    for (int j = 0; j < d; ++j) x[static_cast<size_t>(j)] += pe[j];
  }

  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerParams& lp = m.layers[static_cast<size_t>(l)];
    std::vector<double> a = rms_norm_vec(x, lp.attn_gain);
    std::vector<double> q = matvec(a, lp.wq);
    std::vector<double> k = matvec(a, lp.wk);
    std::vector<double> v = matvec(a, lp.wv);
    if (cfg.pos_encoding == PosEncoding::Rope) {
      rope_vec(q, pos, cfg.n_heads, hd, cfg.rope_base);
      rope_vec(k, pos, cfg.n_heads, hd, cfg.rope_base);
    }
    cache.append(l, std::move(k), std::move(v));
    int t_now = pos + 1;

    std::vector<double> mixed(static_cast<size_t>(d), 0.0);
    std::vector<double> scores(static_cast<size_t>(t_now));
    for (int h = 0; h < cfg.n_heads; ++h) {
      int off = h * hd;
      for (int t = 0; t < t_now; ++t) {
        const std::vector<double>& kt = cache.key(l, t);
        double s = 0.0;
        for (int j = 0; j < hd; ++j) {
          s += q[static_cast<size_t>(off + j)] * kt[static_cast<size_t>(off + j)];
        }
        scores[static_cast<size_t>(t)] = s * inv_sqrt_hd;
      }
      double mx = scores[0];
      for (int t = 1; t < t_now; ++t) {
        if (scores[static_cast<size_t>(t)] > mx) mx = scores[static_cast<size_t>(t)];
      }
      double denom = 0.0;
      for (int t = 0; t < t_now; ++t) {
        scores[static_cast<size_t>(t)] = std::exp(scores[static_cast<size_t>(t)] - mx);
        denom += scores[static_cast<size_t>(t)];
      }
      for (int t = 0; t < t_now; ++t) {
        scores[static_cast<size_t>(t)] /= denom;
      }
      for (int t = 0; t < t_now; ++t) {
        double p = scores[static_cast<size_t>(t)];
        const std::vector<double>& vt = cache.value(l, t);
        for (int j = 0; j < hd; ++j) {
          mixed[static_cast<size_t>(off + j)] += p * vt[static_cast<size_t>(off + j)];
        }
      }
    }
    std::vector<double> attn = matvec(mixed, lp.wo);
    for (int j = 0; j < d; ++j) x[static_cast<size_t>(j)] += attn[static_cast<size_t>(j)];

    std::vector<double> mm = rms_norm_vec(x, lp.mlp_gain);
    std::vector<double> h1 = matvec(mm, lp.w_up);
    for (double& hv : h1) hv = hv * sigmoid(hv);
    std::vector<double> down = matvec(h1, lp.w_down);
    for (int j = 0; j < d; ++j) x[static_cast<size_t>(j)] += down[static_cast<size_t>(j)];
  }

  std::vector<double> f = rms_norm_vec(x, m.final_gain);
  std::vector<double> lg = matvec(f, m.lm_head);
  Tensor2D logits(1, cfg.vocab_size);
  std::copy(lg.begin(), lg.end(), logits.data.begin());
  return logits;
}

Var model_loss(Tape& tape, const ModelConfig& cfg, const std::vector<Var>& param_vars,
               const std::vector<int>& inputs, const std::vector<int>& targets) {
  if (inputs.size() != targets.size()) {
    throw std::invalid_argument("model_loss: inputs and targets differ in length");
  }
  check_tokens(cfg, inputs);
  ForwardNodes nodes = build_forward(tape, cfg, param_vars, inputs);
  return tape.cross_entropy_loss(nodes.logits, targets);
}

}  // namespace kvlab
