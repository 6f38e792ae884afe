#pragma once

#include <cstdint>
#include <vector>

#include "kvlab/model.hpp"
#include "kvlab/optim.hpp"

namespace kvlab {

struct TrainSettings {
  int steps = 1000;
  int batch = 4;    // sequences per step
  int window = 96;  // tokens per sequence
  AdamConfig adam{};
  uint64_t seed = 7;
  double target_loss = 1.5;  // warn (not fail) when the final loss stays above
};

struct TrainResult {
  std::vector<double> losses;  // one entry per step
  bool reached_target = true;
};

// Next-token training on windows sampled from the given documents. Each batch
// window stays inside one document, so models trained on per-topic documents
// learn to continue the active topic. Deterministic in settings.seed.
TrainResult train(Model& m, const std::vector<std::vector<int>>& docs, const TrainSettings& settings);

}  // namespace kvlab
