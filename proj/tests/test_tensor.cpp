#include <doctest.h>

#include <cmath>

#include "kvlab/rng.hpp"
#include "kvlab/tensor.hpp"

using namespace kvlab;

namespace {

Tensor2D random_tensor(int r, int c, Rng& rng, double scale = 1.0) {
  Tensor2D t(r, c);
  for (double& v : t.data) {
    v = rng.next_gaussian() * scale;
  }
  return t;
}

// Independent reference: one output element at a time.
Tensor2D matmul_oracle(const Tensor2D& a, const Tensor2D& b) {
  Tensor2D out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < b.cols; ++j) {
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) {
        s += a.at(i, k) * b.at(k, j);
      }
      out.at(i, j) = s;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("matmul identity and scalar") {
  Tensor2D eye(2, 2);
  eye.at(0, 0) = 1;
  eye.at(1, 1) = 1;
  Tensor2D b(2, 2);
  b.data = {3, 4, 5, 6};
  Tensor2D out = matmul(eye, b);
  CHECK(out.data == std::vector<double>{3, 4, 5, 6});

  Tensor2D x(1, 1, 2.0), y(1, 1, 3.0);
  CHECK(matmul(x, y).at(0, 0) == 6.0);
}

TEST_CASE("matmul matches triple-loop oracle exactly") {
  Rng rng(42);
  Tensor2D a = random_tensor(4, 5, rng);
  Tensor2D b = random_tensor(5, 3, rng);
  Tensor2D got = matmul(a, b);
  Tensor2D want = matmul_oracle(a, b);
  REQUIRE(got.same_shape(want));
  for (size_t i = 0; i < got.data.size(); ++i) {
    CHECK(got.data[i] == want.data[i]);
  }
}

TEST_CASE("matmul dimension mismatch names both shapes") {
  Tensor2D a(4, 5), b(3, 3);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("4x5"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("3x3"), std::invalid_argument);
}

TEST_CASE("matmul_nt and matmul_tn agree with explicit transpose") {
  Rng rng(7);
  Tensor2D a = random_tensor(4, 6, rng);
  Tensor2D b = random_tensor(5, 6, rng);
  Tensor2D nt = matmul_nt(a, b);
  Tensor2D ref = matmul_oracle(a, transpose(b));
  for (size_t i = 0; i < nt.data.size(); ++i) {
    CHECK(nt.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-14));
  }
  Tensor2D c = random_tensor(6, 4, rng);
  Tensor2D d = random_tensor(6, 3, rng);
  Tensor2D tn = matmul_tn(c, d);
  Tensor2D ref2 = matmul_oracle(transpose(c), d);
  for (size_t i = 0; i < tn.data.size(); ++i) {
    CHECK(tn.data[i] == doctest::Approx(ref2.data[i]).epsilon(1e-14));
  }
}

TEST_CASE("softmax symmetric and stable") {
  Tensor2D x(1, 2);
  x.data = {0, 0};
  Tensor2D s = softmax_rows(x);
  CHECK(s.data[0] == 0.5);
  CHECK(s.data[1] == 0.5);

  x.data = {1000, 0};
  s = softmax_rows(x);
  CHECK(all_finite(s));
  CHECK(s.data[0] == doctest::Approx(1.0));
  CHECK(s.data[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("softmax matches naive oracle at small magnitudes") {
  Rng rng(3);
  Tensor2D x = random_tensor(5, 9, rng, 2.0);
  Tensor2D got = softmax_rows(x);
  for (int i = 0; i < x.rows; ++i) {
    double denom = 0.0;
    for (int j = 0; j < x.cols; ++j) {
      denom += std::exp(x.at(i, j));
    }
    for (int j = 0; j < x.cols; ++j) {
      CHECK(got.at(i, j) == doctest::Approx(std::exp(x.at(i, j)) / denom).epsilon(1e-12));
    }
  }
}

TEST_CASE("softmax rows sum to one for any finite input") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor2D x = random_tensor(3, 17, rng, std::pow(10.0, rng.next_int(4)));
    Tensor2D s = softmax_rows(x);
    for (int i = 0; i < s.rows; ++i) {
      double sum = 0.0;
      for (int j = 0; j < s.cols; ++j) {
        sum += s.at(i, j);
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("softmax rejects NaN input") {
  Tensor2D x(1, 2);
  x.data = {std::nan(""), 0.0};
  CHECK_THROWS_AS(softmax_rows(x), std::invalid_argument);
}

TEST_CASE("rms_norm basics") {
  Tensor2D ones_row(1, 4, 1.0);
  Tensor2D gain = Tensor2D::ones(1, 4);
  Tensor2D out = rms_norm(ones_row, gain);
  for (double v : out.data) {
    CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
  }

  Tensor2D x(1, 2);
  x.data = {3, 4};
  Tensor2D g2 = Tensor2D::ones(1, 2);
  out = rms_norm(x, g2);
  double expected = 1.0 / std::sqrt(12.5 + 1e-6);
  CHECK(out.data[0] == doctest::Approx(3 * expected).epsilon(1e-12));
  CHECK(out.data[1] == doctest::Approx(4 * expected).epsilon(1e-12));
}

TEST_CASE("rms_norm matches scalar-loop oracle") {
  Rng rng(5);
  Tensor2D x = random_tensor(3, 8, rng);
  Tensor2D gain = random_tensor(1, 8, rng);
  Tensor2D got = rms_norm(x, gain);
  for (int i = 0; i < x.rows; ++i) {
    double ms = 0.0;
    for (int j = 0; j < x.cols; ++j) {
      ms += x.at(i, j) * x.at(i, j);
    }
    ms /= x.cols;
    for (int j = 0; j < x.cols; ++j) {
      double want = x.at(i, j) / std::sqrt(ms + 1e-6) * gain.at(0, j);
      CHECK(got.at(i, j) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("rms_norm shape mismatch") {
  Tensor2D x(2, 4);
  Tensor2D gain(1, 3);
  CHECK_THROWS_AS(rms_norm(x, gain), std::invalid_argument);
}

TEST_CASE("cross_entropy uniform and peaked") {
  int v = 7;
  Tensor2D logits(3, v, 0.25);  // constant rows = uniform distribution
  CHECK(cross_entropy(logits, {0, 3, 6}) == doctest::Approx(std::log(v)).epsilon(1e-12));

  Tensor2D peaked(1, 4);
  peaked.data = {0, 0, 50, 0};
  CHECK(cross_entropy(peaked, {2}) < 1e-10);
}

TEST_CASE("cross_entropy matches log-softmax-gather oracle") {
  Rng rng(9);
  Tensor2D logits = random_tensor(6, 11, rng, 3.0);
  std::vector<int> targets;
  for (int i = 0; i < 6; ++i) {
    targets.push_back(rng.next_int(11));
  }
  double got = cross_entropy(logits, targets);
  double want = 0.0;
  for (int i = 0; i < 6; ++i) {
    double denom = 0.0;
    for (int j = 0; j < logits.cols; ++j) {
      denom += std::exp(logits.at(i, j));
    }
    want += -std::log(std::exp(logits.at(i, targets[static_cast<size_t>(i)])) / denom);
  }
  want /= 6.0;
  CHECK(got == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("cross_entropy target out of range") {
  Tensor2D logits(1, 4);
  CHECK_THROWS_AS(cross_entropy(logits, {4}), std::out_of_range);
  CHECK_THROWS_AS(cross_entropy(logits, {-1}), std::out_of_range);
}
