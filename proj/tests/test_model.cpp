#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "kvlab/checkpoint.hpp"
#include "kvlab/model.hpp"
#include "kvlab/rng.hpp"

using namespace kvlab;

namespace {

ModelConfig tiny_config(uint64_t seed = 1) {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.d_model = 32;
  cfg.head_dim = 8;
  cfg.vocab_size = 40;
  cfg.max_seq = 64;
  cfg.seed = seed;
  return cfg;
}

std::vector<int> random_tokens(int n, int vocab, Rng& rng) {
  std::vector<int> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(rng.next_int(vocab));
  }
  return out;
}

}  // namespace

TEST_CASE("init_model is deterministic per seed") {
  Model a = init_model(tiny_config(5));
  Model b = init_model(tiny_config(5));
  CHECK(a.fingerprint() == b.fingerprint());
  Model c = init_model(tiny_config(6));
  CHECK(a.fingerprint() != c.fingerprint());
}

TEST_CASE("head_dim is derived when unset and enforced when set") {
  ModelConfig cfg = tiny_config();
  cfg.head_dim = 0;
  Model m = init_model(cfg);
  CHECK(m.cfg.head_dim == 8);

  cfg.head_dim = 7;
  CHECK_THROWS_AS(init_model(cfg), std::invalid_argument);
}

TEST_CASE("forward_full single token and shape") {
  Model m = init_model(tiny_config());
  Tensor2D logits = forward_full(m, {3});
  CHECK(logits.rows == 1);
  CHECK(logits.cols == m.cfg.vocab_size);
  CHECK(all_finite(logits));
}

TEST_CASE("causality: perturbing a later token leaves earlier logits bit-identical") {
  Model m = init_model(tiny_config());
  Rng rng(31);
  std::vector<int> tokens = random_tokens(12, m.cfg.vocab_size, rng);
  Tensor2D base = forward_full(m, tokens);
  std::vector<int> mutated = tokens;
  mutated[8] = (mutated[8] + 1) % m.cfg.vocab_size;
  Tensor2D other = forward_full(m, mutated);
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < base.cols; ++j) {
      CHECK(base.at(i, j) == other.at(i, j));
    }
  }
}

TEST_CASE("prefix self-consistency of forward_full") {
  Model m = init_model(tiny_config());
  Rng rng(32);
  std::vector<int> tokens = random_tokens(10, m.cfg.vocab_size, rng);
  Tensor2D full = forward_full(m, tokens);
  for (int n : {1, 4, 7}) {
    std::vector<int> prefix(tokens.begin(), tokens.begin() + n);
    Tensor2D part = forward_full(m, prefix);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < full.cols; ++j) {
        CHECK(part.at(i, j) == doctest::Approx(full.at(i, j)).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("decode_step grows the cache uniformly and matches forward_full") {
  Model m = init_model(tiny_config());
  Rng rng(33);
  std::vector<int> tokens = random_tokens(20, m.cfg.vocab_size, rng);
  Tensor2D full = forward_full(m, tokens);

  KVCache cache = m.new_cache();
  CHECK(cache.length() == 0);
  for (size_t t = 0; t < tokens.size(); ++t) {
    Tensor2D logits = decode_step(m, cache, tokens[t]);
    CHECK(cache.length() == static_cast<int>(t) + 1);  // uniform across layers by construction
    for (int j = 0; j < full.cols; ++j) {
      CHECK(std::abs(logits.at(0, j) - full.at(static_cast<int>(t), j)) < 1e-6);
    }
  }
}

TEST_CASE("decode_step caches exactly what forward_full records") {
  Model m = init_model(tiny_config());
  Rng rng(34);
  std::vector<int> tokens = random_tokens(9, m.cfg.vocab_size, rng);

  KVCache recorded;
  forward_full(m, tokens, &recorded);

  KVCache incremental = m.new_cache();
  for (int tok : tokens) {
    decode_step(m, incremental, tok);
  }
  REQUIRE(recorded.length() == incremental.length());
  for (int l = 0; l < m.cfg.n_layers; ++l) {
    for (int t = 0; t < recorded.length(); ++t) {
      const auto& rk = recorded.key(l, t);
      const auto& ik = incremental.key(l, t);
      const auto& rv = recorded.value(l, t);
      const auto& iv = incremental.value(l, t);
      for (size_t j = 0; j < rk.size(); ++j) {
        CHECK(std::abs(rk[j] - ik[j]) < 1e-9);
        CHECK(std::abs(rv[j] - iv[j]) < 1e-9);
      }
    }
  }
}

TEST_CASE("decode_step errors") {
  Model m = init_model(tiny_config());
  KVCache cache = m.new_cache();
  CHECK_THROWS_AS(decode_step(m, cache, -1), std::out_of_range);
  CHECK_THROWS_AS(decode_step(m, cache, m.cfg.vocab_size), std::out_of_range);

  ModelConfig small = tiny_config();
  small.max_seq = 2;
  Model ms = init_model(small);
  KVCache c2 = ms.new_cache();
  decode_step(ms, c2, 0);
  decode_step(ms, c2, 1);
  CHECK_THROWS_AS(decode_step(ms, c2, 2), std::runtime_error);
}

TEST_CASE("forward_full rejects bad input") {
  Model m = init_model(tiny_config());
  std::vector<int> too_long(static_cast<size_t>(m.cfg.max_seq) + 1, 1);
  CHECK_THROWS_AS(forward_full(m, too_long), std::invalid_argument);
  CHECK_THROWS_AS(forward_full(m, {m.cfg.vocab_size}), std::out_of_range);
}

TEST_CASE("learned-absolute position mode works end to end") {
  ModelConfig cfg = tiny_config(9);
  cfg.pos_encoding = PosEncoding::LearnedAbsolute;
  Model m = init_model(cfg);
  Rng rng(35);
  std::vector<int> tokens = random_tokens(8, cfg.vocab_size, rng);
  Tensor2D full = forward_full(m, tokens);
  KVCache cache = m.new_cache();
  Tensor2D logits;
  for (int tok : tokens) {
    logits = decode_step(m, cache, tok);
  }
  for (int j = 0; j < full.cols; ++j) {
    CHECK(std::abs(logits.at(0, j) - full.at(full.rows - 1, j)) < 1e-6);
  }
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  Model m = init_model(tiny_config(123));
  Vocab v;
  v.id_to_word = {"<eos>", "<unk>", "alpha", "beta"};
  for (size_t i = 0; i < v.id_to_word.size(); ++i) {
    v.word_to_id[v.id_to_word[i]] = static_cast<int>(i);
  }

  auto path = std::filesystem::temp_directory_path() / "kvlab_test_ckpt.bin";
  save_model(path, m, &v);
  LoadedModel loaded = load_model(path);
  CHECK(loaded.model.fingerprint() == m.fingerprint());
  auto pa = m.params();
  auto pb = loaded.model.params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->data == pb[i]->data);
  }
  REQUIRE(loaded.vocab.has_value());
  CHECK(loaded.vocab->id_to_word == v.id_to_word);
  std::filesystem::remove(path);
}

TEST_CASE("cache overwrite validates indices") {
  Model m = init_model(tiny_config());
  KVCache cache = m.new_cache();
  decode_step(m, cache, 1);
  std::vector<double> k(static_cast<size_t>(m.cfg.d_model), 0.0);
  CHECK_THROWS_AS(cache.overwrite(0, 5, k, k), std::out_of_range);
  CHECK_THROWS_AS(cache.overwrite(9, 0, k, k), std::out_of_range);
  std::vector<double> wrong(3, 0.0);
  CHECK_THROWS_AS(cache.overwrite(0, 0, wrong, wrong), std::invalid_argument);
}
