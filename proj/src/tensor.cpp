#include "kvlab/tensor.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace kvlab {

Tensor2D::Tensor2D(int r, int c, double fill)
    : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {
  if (r < 0 || c < 0) {
    throw std::invalid_argument("Tensor2D: negative shape " + shape_str());
  }
}

Tensor2D Tensor2D::ones(int r, int c) { return Tensor2D(r, c, 1.0); }

std::string Tensor2D::shape_str() const {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
  if (a.cols != b.rows) {
    throw std::invalid_argument("matmul: dimension mismatch " + a.shape_str() + " times " + b.shape_str());
  }
  Tensor2D out(a.rows, b.cols);
  // i-k-j order: row of out accumulated in a fixed sweep, cache friendly.
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + static_cast<size_t>(i) * a.cols;
    double* orow = out.data.data() + static_cast<size_t>(i) * out.cols;
    for (int k = 0; k < a.cols; ++k) {
      double av = arow[k];
      const double* brow = b.data.data() + static_cast<size_t>(k) * b.cols;
      for (int j = 0; j < b.cols; ++j) {
        orow[j] += av * brow[j];
      }
    }
  }
  return out;
}

Tensor2D matmul_nt(const Tensor2D& a, const Tensor2D& b) {
  if (a.cols != b.cols) {
    throw std::invalid_argument("matmul_nt: dimension mismatch " + a.shape_str() + " times " + b.shape_str() + "^T");
  }
  Tensor2D out(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + static_cast<size_t>(i) * a.cols;
    for (int j = 0; j < b.rows; ++j) {
      const double* brow = b.data.data() + static_cast<size_t>(j) * b.cols;
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) {
        s += arow[k] * brow[k];
      }
      out.at(i, j) = s;
    }
  }
  return out;
}

Tensor2D matmul_tn(const Tensor2D& a, const Tensor2D& b) {
  if (a.rows != b.rows) {
    throw std::invalid_argument("matmul_tn: dimension mismatch " + a.shape_str() + "^T times " + b.shape_str());
  }
  Tensor2D out(a.cols, b.cols);
  for (int k = 0; k < a.rows; ++k) {
    const double* arow = a.data.data() + static_cast<size_t>(k) * a.cols;
    const double* brow = b.data.data() + static_cast<size_t>(k) * b.cols;
    for (int i = 0; i < a.cols; ++i) {
      double av = arow[i];
      double* orow = out.data.data() + static_cast<size_t>(i) * out.cols;
      for (int j = 0; j < b.cols; ++j) {
        orow[j] += av * brow[j];
      }
    }
  }
  return out;
}

Tensor2D transpose(const Tensor2D& a) {
  Tensor2D out(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < a.cols; ++j) {
      out.at(j, i) = a.at(i, j);
    }
  }
  return out;
}

Tensor2D softmax_rows(const Tensor2D& x) {
  Tensor2D out(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    auto xin = x.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : xin) {
      if (std::isnan(v)) {
        throw std::invalid_argument("softmax_rows: NaN input at row " + std::to_string(i));
      }
      if (v > mx) mx = v;
    }
    double denom = 0.0;
    auto orow = out.row(i);
    for (int j = 0; j < x.cols; ++j) {
      double e = std::exp(xin[j] - mx);
      orow[j] = e;
      denom += e;
    }
    for (int j = 0; j < x.cols; ++j) {
      orow[j] /= denom;
    }
  }
  return out;
}

Tensor2D rms_norm(const Tensor2D& x, const Tensor2D& gain, double eps) {
  if (gain.rows != 1 || gain.cols != x.cols) {
    throw std::invalid_argument("rms_norm: gain shape " + gain.shape_str() + " does not match input " + x.shape_str());
  }
  Tensor2D out(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    auto xin = x.row(i);
    double ms = 0.0;
    for (double v : xin) {
      ms += v * v;
    }
    ms /= x.cols;
    double inv = 1.0 / std::sqrt(ms + eps);
    auto orow = out.row(i);
    for (int j = 0; j < x.cols; ++j) {
      orow[j] = xin[j] * inv * gain.data[j];
    }
  }
  return out;
}

double cross_entropy(const Tensor2D& logits, const std::vector<int>& targets) {
  if (static_cast<size_t>(logits.rows) != targets.size()) {
    throw std::invalid_argument("cross_entropy: logits rows " + std::to_string(logits.rows) +
                                " != targets length " + std::to_string(targets.size()));
  }
  double total = 0.0;
  for (int i = 0; i < logits.rows; ++i) {
    int t = targets[static_cast<size_t>(i)];
    if (t < 0 || t >= logits.cols) {
      throw std::out_of_range("cross_entropy: target id " + std::to_string(t) + " outside vocabulary of " +
                              std::to_string(logits.cols));
    }
    auto row = logits.row(i);
    double mx = row[0];
    for (double v : row) {
      if (v > mx) mx = v;
    }
    double denom = 0.0;
    for (double v : row) {
      denom += std::exp(v - mx);
    }
    total += (mx + std::log(denom)) - row[t];
  }
  return total / logits.rows;
}

bool all_finite(const Tensor2D& x) {
  for (double v : x.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace kvlab
