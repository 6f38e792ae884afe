#include <doctest.h>

#include <cmath>

#include "kvlab/autograd.hpp"
#include "kvlab/model.hpp"
#include "kvlab/rng.hpp"

using namespace kvlab;

namespace {

Tensor2D random_tensor(int r, int c, Rng& rng, double scale = 1.0) {
  Tensor2D t(r, c);
  for (double& v : t.data) {
    v = rng.next_gaussian() * scale;
  }
  return t;
}

}  // namespace

TEST_CASE("backward of x squared") {
  Tape tape;
  Tensor2D x(1, 1, 3.0);
  Var xv = tape.leaf(x, true);
  Var y = tape.mul(xv, xv);
  tape.backward(y);
  CHECK(tape.grad(xv).data[0] == doctest::Approx(6.0));
}

TEST_CASE("loss independent of a parameter has exactly zero gradient") {
  Tape tape;
  Var used = tape.leaf(Tensor2D(1, 1, 2.0), true);
  Var unused = tape.leaf(Tensor2D(3, 3, 1.0), true);
  Var y = tape.mul(used, used);
  tape.backward(y);
  for (double g : tape.grad(unused).data) {
    CHECK(g == 0.0);
  }
}

TEST_CASE("elementwise op gradients against finite differences") {
  Rng rng(21);
  Tensor2D a = random_tensor(3, 4, rng);
  Tensor2D b = random_tensor(3, 4, rng);

  auto loss_fn = [&](const Tensor2D& av, const Tensor2D& bv) {
    Tape t;
    Var va = t.leaf(av, true);
    Var vb = t.leaf(bv, true);
    Var sum = t.add(t.silu(t.mul(va, vb)), t.scale(va, 0.5));
    // squash to a scalar via cross-entropy against a fixed target
    Var loss = t.cross_entropy_loss(sum, {0, 2, 1});
    return std::pair<Tape, Var>(std::move(t), loss);
  };

  auto [tape, loss] = loss_fn(a, b);
  tape.backward(loss);

  double h = 1e-5;
  for (size_t i = 0; i < a.data.size(); ++i) {
    Tensor2D ap = a, am = a;
    ap.data[i] += h;
    am.data[i] -= h;
    auto [tp, lp] = loss_fn(ap, b);
    auto [tm, lm] = loss_fn(am, b);
    double fd = (tp.value(lp).data[0] - tm.value(lm).data[0]) / (2 * h);
    // the leaf for a is node 0 in each tape
    CHECK(tape.grad(Var{0}).data[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("full transformer gradients match central finite differences") {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.d_model = 32;
  cfg.head_dim = 8;
  cfg.vocab_size = 50;
  cfg.max_seq = 32;
  cfg.seed = 77;
  Model m = init_model(cfg);

  Rng rng(123);
  std::vector<int> inputs, targets;
  for (int i = 0; i < 16; ++i) {
    inputs.push_back(rng.next_int(cfg.vocab_size));
    targets.push_back(rng.next_int(cfg.vocab_size));
  }

  auto params = m.params();
  auto loss_value = [&]() {
    Tape t;
    std::vector<Var> pv;
    for (Tensor2D* p : params) {
      pv.push_back(t.leaf(*p, false));
    }
    Var loss = model_loss(t, m.cfg, pv, inputs, targets);
    return t.value(loss).data[0];
  };

  Tape tape;
  std::vector<Var> pv;
  for (Tensor2D* p : params) {
    pv.push_back(tape.leaf(*p, true));
  }
  Var loss = model_loss(tape, m.cfg, pv, inputs, targets);
  tape.backward(loss);

  // sample 200 random parameters across all tensors
  double h = 1e-4;
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    size_t pi = static_cast<size_t>(rng.next_int(static_cast<int>(params.size())));
    size_t ei = static_cast<size_t>(rng.next_int(static_cast<int>(params[pi]->data.size())));
    double saved = params[pi]->data[ei];
    params[pi]->data[ei] = saved + h;
    double up = loss_value();
    params[pi]->data[ei] = saved - h;
    double down = loss_value();
    params[pi]->data[ei] = saved;
    double fd = (up - down) / (2 * h);
    double an = tape.grad(pv[pi]).data[ei];
    double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
    worst = std::max(worst, rel);
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("tape ops preserve shapes and values") {
  Rng rng(4);
  Tape t;
  Tensor2D x = random_tensor(5, 6, rng);
  Var vx = t.leaf(x, true);

  Var sc = t.slice_cols(vx, 2, 3);
  CHECK(t.value(sc).rows == 5);
  CHECK(t.value(sc).cols == 3);
  CHECK(t.value(sc).at(1, 0) == x.at(1, 2));

  Var cc = t.concat_cols({sc, sc});
  CHECK(t.value(cc).cols == 6);

  Var sr = t.slice_rows(vx, 1, 2);
  CHECK(t.value(sr).rows == 2);
  CHECK(t.value(sr).at(0, 0) == x.at(1, 0));
}

TEST_CASE("rope is norm-preserving and position dependent") {
  Rng rng(8);
  Tape t;
  Tensor2D x = random_tensor(3, 16, rng);
  Var vx = t.leaf(x, false);
  Var rot = t.rope(vx, 0, 2, 8, 10000.0);
  const Tensor2D& y = t.value(rot);
  for (int r = 0; r < 3; ++r) {
    double nx = 0, ny = 0;
    for (int c = 0; c < 16; ++c) {
      nx += x.at(r, c) * x.at(r, c);
      ny += y.at(r, c) * y.at(r, c);
    }
    CHECK(ny == doctest::Approx(nx).epsilon(1e-12));
  }
  // position 0 is the identity rotation
  Tape t2;
  Var v2 = t2.leaf(x, false);
  Var rot0 = t2.rope(v2, 0, 2, 8, 10000.0);
  for (int c = 0; c < 16; ++c) {
    CHECK(t2.value(rot0).at(0, c) == doctest::Approx(x.at(0, c)).epsilon(1e-15));
  }
  // later rows differ from their unrotated values
  bool differs = false;
  for (int c = 0; c < 16; ++c) {
    if (std::abs(y.at(2, c) - x.at(2, c)) > 1e-9) differs = true;
  }
  CHECK(differs);
}

TEST_CASE("causal softmax zeroes the future") {
  Rng rng(14);
  Tape t;
  Tensor2D s = random_tensor(4, 4, rng);
  Var vs = t.leaf(s, true);
  Var p = t.causal_softmax(vs);
  const Tensor2D& y = t.value(p);
  for (int i = 0; i < 4; ++i) {
    double sum = 0.0;
    for (int j = 0; j < 4; ++j) {
      if (j > i) {
        CHECK(y.at(i, j) == 0.0);
      }
      sum += y.at(i, j);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}
