#include "kvlab/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace kvlab {

void adam_step(const std::vector<Tensor2D*>& params, const std::vector<const Tensor2D*>& grads,
               AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " params vs " +
                                std::to_string(grads.size()) + " grads");
  }
  if (state.m.empty()) {
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const Tensor2D* p : params) {
      state.m.emplace_back(p->rows, p->cols);
      state.v.emplace_back(p->rows, p->cols);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: state holds " + std::to_string(state.m.size()) +
                                " slots for " + std::to_string(params.size()) + " params");
  }
  state.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor2D& p = *params[i];
    const Tensor2D& g = *grads[i];
    Tensor2D& m = state.m[i];
    Tensor2D& v = state.v[i];
    if (!p.same_shape(g) || !p.same_shape(m)) {
      throw std::invalid_argument("adam_step: shape mismatch at param " + std::to_string(i) + ": " +
                                  p.shape_str() + " vs grad " + g.shape_str());
    }
    for (size_t k = 0; k < p.data.size(); ++k) {
      m.data[k] = cfg.beta1 * m.data[k] + (1.0 - cfg.beta1) * g.data[k];
      v.data[k] = cfg.beta2 * v.data[k] + (1.0 - cfg.beta2) * g.data[k] * g.data[k];
      double mhat = m.data[k] / bc1;
      double vhat = v.data[k] / bc2;
      p.data[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace kvlab
