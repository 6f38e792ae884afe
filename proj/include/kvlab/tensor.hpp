#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace kvlab {

// Dense row-major 2D tensor of doubles. All model state (parameters, K/V
// vectors, logits) lives in these. Reductions use a fixed summation order so
// repeated runs are bit-identical.
struct Tensor2D {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor2D() = default;
  Tensor2D(int r, int c, double fill = 0.0);

  static Tensor2D ones(int r, int c);

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  const double& at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  std::span<double> row(int r) { return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
  }

  size_t size() const { return data.size(); }
  bool same_shape(const Tensor2D& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const;

  bool operator==(const Tensor2D& o) const = default;
};

// Throws std::invalid_argument naming both shapes on inner-dimension mismatch.
Tensor2D matmul(const Tensor2D& a, const Tensor2D& b);
Tensor2D matmul_nt(const Tensor2D& a, const Tensor2D& b);  // a * b^T
Tensor2D matmul_tn(const Tensor2D& a, const Tensor2D& b);  // a^T * b
Tensor2D transpose(const Tensor2D& a);

// Row-wise softmax with max subtraction. NaN input is an error.
Tensor2D softmax_rows(const Tensor2D& x);

// Each row scaled to unit RMS (with epsilon), then multiplied elementwise by
// gain. gain must be 1 x x.cols.
Tensor2D rms_norm(const Tensor2D& x, const Tensor2D& gain, double eps = 1e-6);

// Mean negative log-likelihood of targets under row-wise softmax of logits.
double cross_entropy(const Tensor2D& logits, const std::vector<int>& targets);

bool all_finite(const Tensor2D& x);

}  // namespace kvlab
