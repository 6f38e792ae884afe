#include "kvlab/lda.hpp"

#include <array>
#include <stdexcept>

#include "kvlab/rng.hpp"

namespace kvlab {

LdaModel lda_train(const std::vector<std::vector<int>>& docs, int vocab_size, double alpha, double beta,
                   int iters, uint64_t seed) {
  if (docs.empty()) {
    throw std::invalid_argument("lda_train: empty corpus");
  }
  if (vocab_size < 1) {
    throw std::invalid_argument("lda_train: vocab_size must be >= 1");
  }
  constexpr int kTopics = 2;
  for (const auto& d : docs) {
    for (int w : d) {
      if (w < 0 || w >= vocab_size) {
        throw std::out_of_range("lda_train: word id " + std::to_string(w) + " outside vocabulary");
      }
    }
  }

  Rng rng(seed);
  size_t n_docs = docs.size();
  std::vector<std::vector<int>> z(n_docs);
  std::vector<std::array<double, kTopics>> doc_topic(n_docs, {0.0, 0.0});
  Tensor2D topic_word_count(kTopics, vocab_size);
  double topic_total[kTopics] = {0.0, 0.0};

  for (size_t d = 0; d < n_docs; ++d) {
    z[d].resize(docs[d].size());
    for (size_t i = 0; i < docs[d].size(); ++i) {
      int t = rng.next_int(kTopics);
      z[d][i] = t;
      doc_topic[d][static_cast<size_t>(t)] += 1.0;
      topic_word_count.at(t, docs[d][i]) += 1.0;
      topic_total[t] += 1.0;
    }
  }

  double vbeta = vocab_size * beta;
  for (int it = 0; it < iters; ++it) {
    for (size_t d = 0; d < n_docs; ++d) {
      for (size_t i = 0; i < docs[d].size(); ++i) {
        int w = docs[d][i];
        int old_t = z[d][i];
        doc_topic[d][static_cast<size_t>(old_t)] -= 1.0;
        topic_word_count.at(old_t, w) -= 1.0;
        topic_total[old_t] -= 1.0;

        double p0 = (doc_topic[d][0] + alpha) * (topic_word_count.at(0, w) + beta) / (topic_total[0] + vbeta);
        double p1 = (doc_topic[d][1] + alpha) * (topic_word_count.at(1, w) + beta) / (topic_total[1] + vbeta);
        int t = rng.next_double() * (p0 + p1) < p0 ? 0 : 1;

        z[d][i] = t;
        doc_topic[d][static_cast<size_t>(t)] += 1.0;
        topic_word_count.at(t, w) += 1.0;
        topic_total[t] += 1.0;
      }
    }
  }

  LdaModel model;
  model.alpha = alpha;
  model.beta = beta;
  model.iters = iters;
  model.seed = seed;
  model.topic_word = Tensor2D(kTopics, vocab_size);
  for (int t = 0; t < kTopics; ++t) {
    double denom = topic_total[t] + vbeta;
    for (int w = 0; w < vocab_size; ++w) {
      model.topic_word.at(t, w) = (topic_word_count.at(t, w) + beta) / denom;
    }
  }
  return model;
}

LdaScores lda_infer(const LdaModel& model, std::span<const int> window, int topic_a_index) {
  if (topic_a_index != 0 && topic_a_index != 1) {
    throw std::invalid_argument("lda_infer: topic_a_index must be 0 or 1");
  }
  if (window.empty()) {
    return LdaScores{0.5, 0.5, true};
  }
  for (int w : window) {
    if (w < 0 || w >= model.topic_word.cols) {
      throw std::out_of_range("lda_infer: word id " + std::to_string(w) + " outside vocabulary");
    }
  }
  constexpr int kFoldInIters = 50;
  double theta[2] = {0.5, 0.5};
  double n = static_cast<double>(window.size());
  for (int it = 0; it < kFoldInIters; ++it) {
    double count[2] = {0.0, 0.0};
    for (int w : window) {
      double p0 = theta[0] * model.topic_word.at(0, w);
      double p1 = theta[1] * model.topic_word.at(1, w);
      double total = p0 + p1;
      if (total <= 0.0) {
        p0 = p1 = 0.5;
        total = 1.0;
      }
      count[0] += p0 / total;
      count[1] += p1 / total;
    }
    theta[0] = (count[0] + model.alpha) / (n + 2.0 * model.alpha);
    theta[1] = (count[1] + model.alpha) / (n + 2.0 * model.alpha);
  }
  double norm = theta[0] + theta[1];
  LdaScores out;
  out.a = theta[topic_a_index] / norm;
  out.b = theta[1 - topic_a_index] / norm;
  return out;
}

}  // namespace kvlab
