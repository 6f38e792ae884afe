#include "kvlab/train.hpp"

#include <algorithm>
#include <stdexcept>

#include "kvlab/autograd.hpp"
#include "kvlab/rng.hpp"

namespace kvlab {

TrainResult train(Model& m, const std::vector<std::vector<int>>& docs, const TrainSettings& settings) {
  std::vector<const std::vector<int>*> usable;
  for (const auto& d : docs) {
    if (d.size() >= 2) usable.push_back(&d);
  }
  if (usable.empty()) {
    throw std::invalid_argument("train: corpus is empty (no document with >= 2 tokens)");
  }
  if (settings.batch < 1 || settings.window < 1) {
    throw std::invalid_argument("train: batch and window must be >= 1");
  }

  TrainResult result;
  if (settings.steps <= 0) {
    result.reached_target = false;
    return result;
  }

  Rng rng(settings.seed);
  AdamState state;
  auto params = m.params();
  std::vector<Tensor2D> grad_acc;
  grad_acc.reserve(params.size());
  for (Tensor2D* p : params) {
    grad_acc.emplace_back(p->rows, p->cols);
  }

  int max_window = std::min(settings.window, m.cfg.max_seq);
  for (int step = 0; step < settings.steps; ++step) {
    for (auto& g : grad_acc) {
      std::fill(g.data.begin(), g.data.end(), 0.0);
    }
    double step_loss = 0.0;
    for (int b = 0; b < settings.batch; ++b) {
      const std::vector<int>& doc = *usable[static_cast<size_t>(rng.next_int(static_cast<int>(usable.size())))];
      int w = std::min(max_window, static_cast<int>(doc.size()) - 1);
      int start = rng.next_int(static_cast<int>(doc.size()) - w);
      std::vector<int> inputs(doc.begin() + start, doc.begin() + start + w);
      std::vector<int> targets(doc.begin() + start + 1, doc.begin() + start + 1 + w);

      Tape tape;
      std::vector<Var> pv;
      pv.reserve(params.size());
      for (Tensor2D* p : params) {
        pv.push_back(tape.leaf(*p, /*requires_grad=*/true));
      }
      Var loss = model_loss(tape, m.cfg, pv, inputs, targets);
      tape.backward(loss);
      step_loss += tape.value(loss).data[0];
      for (size_t i = 0; i < params.size(); ++i) {
        const Tensor2D& g = tape.grad(pv[i]);
        for (size_t k = 0; k < g.data.size(); ++k) {
          grad_acc[i].data[k] += g.data[k] / settings.batch;
        }
      }
    }
    std::vector<const Tensor2D*> grad_ptrs;
    grad_ptrs.reserve(grad_acc.size());
    for (const auto& g : grad_acc) {
      grad_ptrs.push_back(&g);
    }
    adam_step(params, grad_ptrs, state, settings.adam);
    result.losses.push_back(step_loss / settings.batch);
  }

  result.reached_target = result.losses.back() <= settings.target_loss;
  return result;
}

}  // namespace kvlab
