#pragma once

#include <vector>

#include "kvlab/tensor.hpp"

namespace kvlab {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor2D> m;
  std::vector<Tensor2D> v;
  long step = 0;
};

// Standard Adam with bias correction. State is initialized from the parameter
// shapes on first use; shape mismatches afterwards are errors.
void adam_step(const std::vector<Tensor2D*>& params, const std::vector<const Tensor2D*>& grads,
               AdamState& state, const AdamConfig& cfg);

}  // namespace kvlab
