#include "kvlab/autograd.hpp"

#include <cmath>
#include <stdexcept>

namespace kvlab {

namespace {

void add_into(Tensor2D& acc, const Tensor2D& inc) {
  for (size_t i = 0; i < acc.data.size(); ++i) {
    acc.data[i] += inc.data[i];
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var Tape::push(Tensor2D value, bool requires_grad, std::function<void(Tape&)> back) {
  Node n;
  n.grad = requires_grad ? Tensor2D(value.rows, value.cols) : Tensor2D();
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.back = requires_grad ? std::move(back) : std::function<void(Tape&)>();
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor2D value, bool requires_grad) {
  return push(std::move(value), requires_grad, {});
}

Var Tape::embed_rows(Var table, const std::vector<int>& ids) {
  const Tensor2D& tab = value(table);
  Tensor2D out(static_cast<int>(ids.size()), tab.cols);
  for (size_t r = 0; r < ids.size(); ++r) {
    int id = ids[r];
    if (id < 0 || id >= tab.rows) {
      throw std::out_of_range("embed_rows: id " + std::to_string(id) + " outside table of " +
                              std::to_string(tab.rows));
    }
    auto src = tab.row(id);
    auto dst = out.row(static_cast<int>(r));
    std::copy(src.begin(), src.end(), dst.begin());
  }
  Var out_v{static_cast<int>(nodes_.size())};
  return push(std::move(out), needs(table), [table, ids, out_v](Tape& t) {
    const Tensor2D& g = t.grad(out_v);
    Tensor2D& gt = t.grad_ref(table);
    for (size_t r = 0; r < ids.size(); ++r) {
      auto src = g.row(static_cast<int>(r));
      auto dst = gt.row(ids[r]);
      for (size_t j = 0; j < src.size(); ++j) {
        dst[j] += src[j];
      }
    }
  });
}

Var Tape::matmul(Var a, Var b) {
  Tensor2D out = kvlab::matmul(value(a), value(b));
  Var out_v{static_cast<int>(nodes_.size())};
  return push(std::move(out), needs(a) || needs(b), [a, b, out_v](Tape& t) {
    const Tensor2D& g = t.grad(out_v);
    if (t.needs(a)) add_into(t.grad_ref(a), kvlab::matmul_nt(g, t.value(b)));
    if (t.needs(b)) add_into(t.grad_ref(b), kvlab::matmul_tn(t.value(a), g));
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  Tensor2D out = kvlab::matmul_nt(value(a), value(b));
  Var out_v{static_cast<int>(nodes_.size())};
  return push(std::move(out), needs(a) || needs(b), [a, b, out_v](Tape& t) {
    const Tensor2D& g = t.grad(out_v);
    if (t.needs(a)) add_into(t.grad_ref(a), kvlab::matmul(g, t.value(b)));
    if (t.needs(b)) add_into(t.grad_ref(b), kvlab::matmul_tn(g, t.value(a)));
  });
}

Var Tape::add(Var a, Var b) {
  const Tensor2D& av = value(a);
  const Tensor2D& bv = value(b);
  if (!av.same_shape(bv)) {
    throw std::invalid_argument("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  }
  Tensor2D out = av;
  add_into(out, bv);
  Var out_v{static_cast<int>(nodes_.size())};
  return push(std::move(out), needs(a) || needs(b), [a, b, out_v](Tape& t) {
    const Tensor2D& g = t.grad(out_v);
    if (t.needs(a)) add_into(t.grad_ref(a), g);
    if (t.needs(b)) add_into(t.grad_ref(b), g);
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor2D& av = value(a);
  const Tensor2D& bv = value(b);
  if (!av.same_shape(bv)) {
    throw std::invalid_argument("mul: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  }
  Tensor2D out(av.rows, av.cols);
  for (size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = av.data[i] * bv.data[i];
  }
  Var out_v{static_cast<int>(nodes_.size())};
  return push(std::move(out), needs(a) || needs(b), [a, b, out_v](Tape& t) {
    const Tensor2D& g = t.grad(out_v);
    if (t.needs(a)) {
      Tensor2D& ga = t.grad_ref(a);
      const Tensor2D& bv2 = t.value(b);
      for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * bv2.data[i];
    }
    if (t.needs(b)) {
      Tensor2D& gb = t.grad_ref(b);
      const Tensor2D& av2 = t.value(a);
      for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i] * av2.data[i];
    }
  });
}

Var Tape::scale(Var a, double c) {
  Tensor2D out = value(a);
  for (double& v : out.data) v *= c;
  Var out_v{static_cast<int>(nodes_.size())};
  return push(std::move(out), needs(a), [a, c, out_v](Tape& t) {
    const Tensor2D& g = t.grad(out_v);
    Tensor2D& ga = t.grad_ref(a);
    for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += c * g.data[i];
  });
}

Var Tape::silu(Var a) {
  const Tensor2D& av = value(a);
  Tensor2D out(av.rows, av.cols);
  for (size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = av.data[i] * sigmoid(av.data[i]);
  }
  Var out_v{static_cast<int>(nodes_.size())};
  return push(std::move(out), needs(a), [a, out_v](Tape& t) {
    const Tensor2D& g = t.grad(out_v);
    const Tensor2D& x = t.value(a);
    Tensor2D& ga = t.grad_ref(a);
    for (size_t i = 0; i < g.data.size(); ++i) {
      double s = sigmoid(x.data[i]);
      ga.data[i] += g.data[i] * s * (1.0 + x.data[i] * (1.0 - s));
    }
  });
}

Var Tape::rms_norm(Var x, Var gain, double eps) {
  const Tensor2D& xv = value(x);
  const Tensor2D& gv = value(gain);
  if (gv.rows != 1 || gv.cols != xv.cols) {
    throw std::invalid_argument("rms_norm: gain shape " + gv.shape_str() + " does not match input " + xv.shape_str());
  }
  int n = xv.cols;
  std::vector<double> inv(static_cast<size_t>(xv.rows));
  Tensor2D out(xv.rows, xv.cols);
  for (int i = 0; i < xv.rows; ++i) {
    auto xin = xv.row(i);
    double ms = 0.0;
    for (double v : xin) ms += v * v;
    ms /= n;
    inv[static_cast<size_t>(i)] = 1.0 / std::sqrt(ms + eps);
    auto orow = out.row(i);
    for (int j = 0; j < n; ++j) {
      orow[j] = xin[j] * inv[static_cast<size_t>(i)] * gv.data[static_cast<size_t>(j)];
    }
  }
  Var out_v{static_cast<int>(nodes_.size())};
  return push(std::move(out), needs(x) || needs(gain), [x, gain, inv, n, out_v](Tape& t) {
    const Tensor2D& g = t.grad(out_v);
    const Tensor2D& xv2 = t.value(x);
    const Tensor2D& gv2 = t.value(gain);
    for (int i = 0; i < xv2.rows; ++i) {
      double r = inv[static_cast<size_t>(i)];
      auto xin = xv2.row(i);
      auto grow = g.row(i);
      if (t.needs(x)) {
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += grow[j] * gv2.data[static_cast<size_t>(j)] * xin[j];
        auto gx = t.grad_ref(x).row(i);
        double r3n = r * r * r / n;
        for (int j = 0; j < n; ++j) {
          gx[j] += r * gv2.data[static_cast<size_t>(j)] * grow[j] - xin[j] * r3n * dot;
        }
      }
      if (t.needs(gain)) {
        auto gg = t.grad_ref(gain).row(0);
        for (int j = 0; j < n; ++j) {
          gg[j] += grow[j] * xin[j] * r;
        }
      }
    }
  });
}

Var Tape::rope(Var x, int start_pos, int n_heads, int head_dim, double base) {
  const Tensor2D& xv = value(x);
  if (xv.cols != n_heads * head_dim || head_dim % 2 != 0) {
    throw std::invalid_argument("rope: input " + xv.shape_str() + " incompatible with " + std::to_string(n_heads) +
                                " heads of dim " + std::to_string(head_dim));
  }
  Tensor2D out(xv.rows, xv.cols);
  for (int r = 0; r < xv.rows; ++r) {
    int pos = start_pos + r;
    auto xin = xv.row(r);
    auto orow = out.row(r);
    for (int i = 0; i < head_dim; i += 2) {
      double freq = 1.0 / std::pow(base, static_cast<double>(i) / head_dim);
      double angle = pos * freq;
      double c = std::cos(angle);
      double s = std::sin(angle);
      for (int h = 0; h < n_heads; ++h) {
        int off = h * head_dim + i;
        double v0 = xin[off];
        double v1 = xin[off + 1];
        orow[off] = v0 * c - v1 * s;
        orow[off + 1] = v0 * s + v1 * c;
      }
    }
  }
  Var out_v{static_cast<int>(nodes_.size())};
  return push(std::move(out), needs(x), [x, start_pos, n_heads, head_dim, base, out_v](Tape& t) {
    const Tensor2D& g = t.grad(out_v);
    Tensor2D& gx = t.grad_ref(x);
    for (int r = 0; r < g.rows; ++r) {
      int pos = start_pos + r;
      auto grow = g.row(r);
      auto gxr = gx.row(r);
      for (int i = 0; i < head_dim; i += 2) {
        double freq = 1.0 / std::pow(base, static_cast<double>(i) / head_dim);
        double angle = pos * freq;
        double c = std::cos(angle);
        double s = std::sin(angle);
        for (int h = 0; h < n_heads; ++h) {
          int off = h * head_dim + i;
          double g0 = grow[off];
          double g1 = grow[off + 1];
          // transpose of the rotation: rotate by -angle
          gxr[off] += g0 * c + g1 * s;
          gxr[off + 1] += -g0 * s + g1 * c;
        }
      }
    }
  });
}

Var Tape::causal_softmax(Var scores) {
  const Tensor2D& sv = value(scores);
  if (sv.rows != sv.cols) {
    throw std::invalid_argument("causal_softmax: expected square scores, got " + sv.shape_str());
  }
  Tensor2D out(sv.rows, sv.cols);
  for (int i = 0; i < sv.rows; ++i) {
    auto xin = sv.row(i);
    double mx = xin[0];
    for (int j = 1; j <= i; ++j) {
      if (xin[j] > mx) mx = xin[j];
    }
    double denom = 0.0;
    auto orow = out.row(i);
    for (int j = 0; j <= i; ++j) {
      double e = std::exp(xin[j] - mx);
      orow[j] = e;
      denom += e;
    }
    for (int j = 0; j <= i; ++j) {
      orow[j] /= denom;
    }
  }
  Var out_v{static_cast<int>(nodes_.size())};
  return push(std::move(out), needs(scores), [scores, out_v](Tape& t) {
    const Tensor2D& g = t.grad(out_v);
    const Tensor2D& y = t.value(out_v);
    Tensor2D& gs = t.grad_ref(scores);
    for (int i = 0; i < y.rows; ++i) {
      auto yrow = y.row(i);
      auto grow = g.row(i);
      double dot = 0.0;
      for (int j = 0; j <= i; ++j) dot += grow[j] * yrow[j];
      auto gsr = gs.row(i);
      for (int j = 0; j <= i; ++j) {
        gsr[j] += yrow[j] * (grow[j] - dot);
      }
    }
  });
}

Var Tape::slice_cols(Var x, int c0, int width) {
  const Tensor2D& xv = value(x);
  if (c0 < 0 || width < 0 || c0 + width > xv.cols) {
    throw std::out_of_range("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c0 + width) +
                            ") outside " + xv.shape_str());
  }
  Tensor2D out(xv.rows, width);
  for (int r = 0; r < xv.rows; ++r) {
    auto src = xv.row(r);
    auto dst = out.row(r);
    for (int j = 0; j < width; ++j) dst[j] = src[c0 + j];
  }
  Var out_v{static_cast<int>(nodes_.size())};
  return push(std::move(out), needs(x), [x, c0, width, out_v](Tape& t) {
    const Tensor2D& g = t.grad(out_v);
    Tensor2D& gx = t.grad_ref(x);
    for (int r = 0; r < g.rows; ++r) {
      auto src = g.row(r);
      auto dst = gx.row(r);
      for (int j = 0; j < width; ++j) dst[c0 + j] += src[j];
    }
  });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) {
    throw std::invalid_argument("concat_cols: no parts");
  }
  int rows = value(parts[0]).rows;
  int total = 0;
  bool req = false;
  for (Var p : parts) {
    if (value(p).rows != rows) {
      throw std::invalid_argument("concat_cols: row mismatch");
    }
    total += value(p).cols;
    req = req || needs(p);
  }
  Tensor2D out(rows, total);
  int off = 0;
  for (Var p : parts) {
    const Tensor2D& pv = value(p);
    for (int r = 0; r < rows; ++r) {
      auto src = pv.row(r);
      auto dst = out.row(r);
      for (int j = 0; j < pv.cols; ++j) dst[off + j] = src[j];
    }
    off += pv.cols;
  }
  Var out_v{static_cast<int>(nodes_.size())};
  std::vector<Var> parts_copy = parts;
  return push(std::move(out), req, [parts_copy, out_v](Tape& t) {
    const Tensor2D& g = t.grad(out_v);
    int off2 = 0;
    for (Var p : parts_copy) {
      const Tensor2D& pv = t.value(p);
      if (t.needs(p)) {
        Tensor2D& gp = t.grad_ref(p);
        for (int r = 0; r < g.rows; ++r) {
          auto src = g.row(r);
          auto dst = gp.row(r);
          for (int j = 0; j < pv.cols; ++j) dst[j] += src[off2 + j];
        }
      }
      off2 += pv.cols;
    }
  });
}

Var Tape::slice_rows(Var x, int r0, int height) {
  const Tensor2D& xv = value(x);
  if (r0 < 0 || height < 0 || r0 + height > xv.rows) {
    throw std::out_of_range("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r0 + height) +
                            ") outside " + xv.shape_str());
  }
  Tensor2D out(height, xv.cols);
  for (int r = 0; r < height; ++r) {
    auto src = xv.row(r0 + r);
    auto dst = out.row(r);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  Var out_v{static_cast<int>(nodes_.size())};
  return push(std::move(out), needs(x), [x, r0, height, out_v](Tape& t) {
    const Tensor2D& g = t.grad(out_v);
    Tensor2D& gx = t.grad_ref(x);
    for (int r = 0; r < height; ++r) {
      auto src = g.row(r);
      auto dst = gx.row(r0 + r);
      for (size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  });
}

Var Tape::cross_entropy_loss(Var logits, std::vector<int> targets) {
  const Tensor2D& lv = value(logits);
  // reuse the plain kernel for the forward value (validates targets too)
  double loss = kvlab::cross_entropy(lv, targets);
  Tensor2D out(1, 1);
  out.data[0] = loss;
  Var out_v{static_cast<int>(nodes_.size())};
  return push(std::move(out), needs(logits), [logits, targets, out_v](Tape& t) {
    double gscale = t.grad(out_v).data[0];
    const Tensor2D& lv2 = t.value(logits);
    Tensor2D probs = softmax_rows(lv2);
    Tensor2D& gl = t.grad_ref(logits);
    double inv_rows = 1.0 / lv2.rows;
    for (int r = 0; r < lv2.rows; ++r) {
      auto prow = probs.row(r);
      auto grow = gl.row(r);
      int tgt = targets[static_cast<size_t>(r)];
      for (int c = 0; c < lv2.cols; ++c) {
        double delta = (c == tgt) ? 1.0 : 0.0;
        grow[c] += gscale * (prow[c] - delta) * inv_rows;
      }
    }
  });
}

void Tape::backward(Var loss) {
  Node& ln = nodes_[loss.id];
  if (ln.value.rows != 1 || ln.value.cols != 1) {
    throw std::invalid_argument("backward: loss must be 1x1, got " + ln.value.shape_str());
  }
  if (!ln.requires_grad) {
    return;  // loss independent of any parameter; all gradients stay zero
  }
  ln.grad.data[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    if (nodes_[i].back) {
      nodes_[i].back(*this);
    }
  }
}

}  // namespace kvlab
