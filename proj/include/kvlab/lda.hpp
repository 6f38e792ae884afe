#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kvlab/tensor.hpp"

namespace kvlab {

// Two-topic LDA trained by collapsed Gibbs sampling. Topic labels are
// arbitrary at this level; callers align them to their corpora.
struct LdaModel {
  int n_topics = 2;
  Tensor2D topic_word;  // n_topics x vocab, rows sum to 1
  double alpha = 0.5;
  double beta = 0.1;
  int iters = 500;
  uint64_t seed = 0;
};

LdaModel lda_train(const std::vector<std::vector<int>>& docs, int vocab_size, double alpha = 0.5,
                   double beta = 0.1, int iters = 500, uint64_t seed = 0);

struct LdaScores {
  double a = 0.5;
  double b = 0.5;
  bool empty_window = false;
};

// Deterministic fold-in inference: iterated responsibility updates of the
// window's topic mixture under the trained word distributions. Scores sum to
// 1; an empty window reports (0.5, 0.5) with the flag set. topic_a_index
// selects which trained topic is reported as "a".
LdaScores lda_infer(const LdaModel& model, std::span<const int> window, int topic_a_index = 0);

}  // namespace kvlab
