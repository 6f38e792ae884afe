#pragma once

#include <functional>
#include <vector>

#include "kvlab/tensor.hpp"

namespace kvlab {

// Handle to a node on a Tape.
struct Var {
  int id = -1;
};

// Reverse-mode autodiff tape. Every operation records its backward closure at
// creation time; backward() replays the closures in exact reverse order of
// recording (creation order is already topological for an eagerly built tape).
class Tape {
 public:
  Var leaf(Tensor2D value, bool requires_grad = false);

  const Tensor2D& value(Var v) const { return nodes_[v.id].value; }
  const Tensor2D& grad(Var v) const { return nodes_[v.id].grad; }

  // table: (N x d) leaf; result row r = table row ids[r].
  Var embed_rows(Var table, const std::vector<int>& ids);
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var add(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double c);
  Var silu(Var a);
  Var rms_norm(Var x, Var gain, double eps = 1e-6);
  // Rotary position encoding across heads laid out side by side in each row;
  // row r is rotated for absolute position start_pos + r.
  Var rope(Var x, int start_pos, int n_heads, int head_dim, double base);
  // Square scores matrix; row i is softmaxed over columns 0..i, the rest are 0.
  Var causal_softmax(Var scores);
  Var slice_cols(Var x, int c0, int width);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_rows(Var x, int r0, int height);
  // Scalar (1x1) mean negative log-likelihood.
  Var cross_entropy_loss(Var logits, std::vector<int> targets);

  // Seeds d(loss)=1 and accumulates gradients into every node that requires
  // them. loss must be a 1x1 node.
  void backward(Var loss);

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor2D value;
    Tensor2D grad;
    std::function<void(Tape&)> back;  // empty for leaves / no-grad nodes
    bool requires_grad = false;
  };

  Var push(Tensor2D value, bool requires_grad, std::function<void(Tape&)> back);
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  Tensor2D& grad_ref(Var v) { return nodes_[v.id].grad; }

  std::vector<Node> nodes_;
};

}  // namespace kvlab
