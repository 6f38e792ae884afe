#include <doctest.h>

#include <cmath>

#include "kvlab/optim.hpp"

using namespace kvlab;

TEST_CASE("adam leaves parameters unchanged for zero gradient") {
  Tensor2D p(2, 2, 1.5);
  Tensor2D g(2, 2, 0.0);
  AdamState state;
  AdamConfig cfg;
  std::vector<Tensor2D*> params{&p};
  std::vector<const Tensor2D*> grads{&g};
  adam_step(params, grads, state, cfg);
  for (double v : p.data) {
    CHECK(v == 1.5);
  }
}

TEST_CASE("first adam step matches the closed form") {
  // at t=1 with zero state: m_hat = g, v_hat = g^2,
  // update = -lr * g / (|g| + eps)
  Tensor2D p(1, 3);
  p.data = {1.0, -2.0, 0.5};
  Tensor2D g(1, 3);
  g.data = {0.3, -0.7, 0.001};
  AdamState state;
  AdamConfig cfg;
  cfg.lr = 0.01;
  std::vector<Tensor2D*> params{&p};
  std::vector<const Tensor2D*> grads{&g};
  adam_step(params, grads, state, cfg);
  std::vector<double> orig = {1.0, -2.0, 0.5};
  for (size_t i = 0; i < 3; ++i) {
    double want = orig[i] - cfg.lr * g.data[i] / (std::abs(g.data[i]) + cfg.eps);
    CHECK(p.data[i] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("adam walks down a quadratic bowl") {
  // scalar objective f(x) = (x - 3)^2, gradient 2(x - 3)
  Tensor2D x(1, 1, -5.0);
  AdamState state;
  AdamConfig cfg;
  cfg.lr = 0.1;
  std::vector<Tensor2D*> params{&x};
  auto loss = [&]() { return (x.data[0] - 3.0) * (x.data[0] - 3.0); };
  double prev = loss();
  double first = prev;
  for (int i = 0; i < 100; ++i) {
    Tensor2D g(1, 1, 2.0 * (x.data[0] - 3.0));
    std::vector<const Tensor2D*> grads{&g};
    adam_step(params, grads, state, cfg);
    if (i >= 10) {
      CHECK(loss() < prev);  // strictly decreasing after warmup
    }
    prev = loss();
  }
  CHECK(prev < first * 0.1);
}

TEST_CASE("adam shape mismatch is an error") {
  Tensor2D p(2, 2);
  Tensor2D g(2, 3);
  AdamState state;
  AdamConfig cfg;
  std::vector<Tensor2D*> params{&p};
  std::vector<const Tensor2D*> grads{&g};
  CHECK_THROWS_AS(adam_step(params, grads, state, cfg), std::invalid_argument);
}
