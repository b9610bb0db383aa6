#include <algorithm>
#include <cmath>
#include <cstring>

#include "ops_common.hpp"
#include "refdet/ops.hpp"

namespace refdet {

using detail::CMapMat;
using detail::MapMat;
using detail::check_same_shape;
using detail::make_result;
using detail::wants_grad;

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<float> out(a.numel());
  const float* pa = a.data();
  const float* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  auto ia = a.impl();
  auto ib = b.impl();
  return make_result(a.shape(), std::move(out), {a, b}, [ia, ib](TensorImpl& self) {
    const float* g = self.grad.data();
    if (wants_grad(ia)) {
      ia->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ia->grad[i] += g[i];
    }
    if (wants_grad(ib)) {
      ib->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ib->grad[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<float> out(a.numel());
  const float* pa = a.data();
  const float* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] - pb[i];
  auto ia = a.impl();
  auto ib = b.impl();
  return make_result(a.shape(), std::move(out), {a, b}, [ia, ib](TensorImpl& self) {
    const float* g = self.grad.data();
    if (wants_grad(ia)) {
      ia->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ia->grad[i] += g[i];
    }
    if (wants_grad(ib)) {
      ib->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ib->grad[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<float> out(a.numel());
  const float* pa = a.data();
  const float* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
  auto ia = a.impl();
  auto ib = b.impl();
  return make_result(a.shape(), std::move(out), {a, b}, [ia, ib](TensorImpl& self) {
    const float* g = self.grad.data();
    if (wants_grad(ia)) {
      ia->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ia->grad[i] += g[i] * ib->data[i];
    }
    if (wants_grad(ib)) {
      ib->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ib->grad[i] += g[i] * ia->data[i];
    }
  });
}

Tensor scale(const Tensor& a, float s) {
  std::vector<float> out(a.numel());
  const float* pa = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * s;
  auto ia = a.impl();
  return make_result(a.shape(), std::move(out), {a}, [ia, s](TensorImpl& self) {
    if (!wants_grad(ia)) return;
    ia->ensure_grad();
    const float* g = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ia->grad[i] += g[i] * s;
  });
}

Tensor relu(const Tensor& a) {
  std::vector<float> out(a.numel());
  const float* pa = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] > 0.0f ? pa[i] : 0.0f;
  auto ia = a.impl();
  return make_result(a.shape(), std::move(out), {a}, [ia](TensorImpl& self) {
    if (!wants_grad(ia)) return;
    ia->ensure_grad();
    const float* g = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (ia->data[i] > 0.0f) ia->grad[i] += g[i];
    }
  });
}

Tensor sqrt_elem(const Tensor& a) {
  std::vector<float> out(a.numel());
  const float* pa = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(std::max(pa[i], 0.0f));
  auto ia = a.impl();
  return make_result(a.shape(), std::move(out), {a}, [ia](TensorImpl& self) {
    if (!wants_grad(ia)) return;
    ia->ensure_grad();
    const float* g = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      float y = self.data[i];
      ia->grad[i] += g[i] * 0.5f / std::max(y, 1e-12f);
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<float> out(static_cast<std::size_t>(m) * n);
  {
    CMapMat ma(a.data(), m, k);
    CMapMat mb(b.data(), k, n);
    MapMat mo(out.data(), m, n);
    mo.noalias() = ma * mb;
  }
  auto ia = a.impl();
  auto ib = b.impl();
  return make_result({m, n}, std::move(out), {a, b}, [ia, ib, m, k, n](TensorImpl& self) {
    CMapMat g(self.grad.data(), m, n);
    if (wants_grad(ia)) {
      ia->ensure_grad();
      MapMat ga(ia->grad.data(), m, k);
      CMapMat mb(ib->data.data(), k, n);
      ga.noalias() += g * mb.transpose();
    }
    if (wants_grad(ib)) {
      ib->ensure_grad();
      MapMat gb(ib->grad.data(), k, n);
      CMapMat ma(ia->data.data(), m, k);
      gb.noalias() += ma.transpose() * g;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1)) {
    throw std::invalid_argument("linear: incompatible shapes " + shape_str(x.shape()) + " with w " +
                                shape_str(w.shape()));
  }
  int n = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != out_f)) {
    throw std::invalid_argument("linear: bad bias shape " + shape_str(b.shape()));
  }
  std::vector<float> out(static_cast<std::size_t>(n) * out_f);
  {
    CMapMat mx(x.data(), n, in);
    CMapMat mw(w.data(), out_f, in);
    MapMat mo(out.data(), n, out_f);
    mo.noalias() = mx * mw.transpose();
    if (b.defined()) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < out_f; ++j) out[static_cast<std::size_t>(i) * out_f + j] += b.data()[j];
      }
    }
  }
  auto ix = x.impl();
  auto iw = w.impl();
  auto ib = b.defined() ? b.impl() : nullptr;
  return make_result({n, out_f}, std::move(out), {x, w, b},
                     [ix, iw, ib, n, in, out_f](TensorImpl& self) {
                       CMapMat g(self.grad.data(), n, out_f);
                       if (wants_grad(ix)) {
                         ix->ensure_grad();
                         MapMat gx(ix->grad.data(), n, in);
                         CMapMat mw(iw->data.data(), out_f, in);
                         gx.noalias() += g * mw;
                       }
                       if (wants_grad(iw)) {
                         iw->ensure_grad();
                         MapMat gw(iw->grad.data(), out_f, in);
                         CMapMat mx(ix->data.data(), n, in);
                         gw.noalias() += g.transpose() * mx;
                       }
                       if (wants_grad(ib)) {
                         ib->ensure_grad();
                         for (int i = 0; i < n; ++i) {
                           for (int j = 0; j < out_f; ++j) {
                             ib->grad[j] += self.grad[static_cast<std::size_t>(i) * out_f + j];
                           }
                         }
                       }
                     });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
  int cols = parts[0].dim(1);
  int rows = 0;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.dim(1) != cols) {
      throw std::invalid_argument("concat_rows: column mismatch");
    }
    rows += p.dim(0);
  }
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (const auto& p : parts) out.insert(out.end(), p.data(), p.data() + p.numel());
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  return make_result({rows, cols}, std::move(out), parts, [impls](TensorImpl& self) {
    std::size_t offset = 0;
    for (const auto& ip : impls) {
      std::size_t n = ip->numel();
      if (wants_grad(ip)) {
        ip->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) ip->grad[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(0) != b.dim(0)) {
    throw std::invalid_argument("concat_cols: row mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  int n = a.dim(0), p = a.dim(1), q = b.dim(1);
  std::vector<float> out(static_cast<std::size_t>(n) * (p + q));
  for (int i = 0; i < n; ++i) {
    std::memcpy(&out[static_cast<std::size_t>(i) * (p + q)], a.data() + static_cast<std::size_t>(i) * p,
                sizeof(float) * p);
    std::memcpy(&out[static_cast<std::size_t>(i) * (p + q) + p],
                b.data() + static_cast<std::size_t>(i) * q, sizeof(float) * q);
  }
  auto ia = a.impl();
  auto ib = b.impl();
  return make_result({n, p + q}, std::move(out), {a, b}, [ia, ib, n, p, q](TensorImpl& self) {
    for (int i = 0; i < n; ++i) {
      const float* g = &self.grad[static_cast<std::size_t>(i) * (p + q)];
      if (wants_grad(ia)) {
        ia->ensure_grad();
        for (int j = 0; j < p; ++j) ia->grad[static_cast<std::size_t>(i) * p + j] += g[j];
      }
      if (wants_grad(ib)) {
        ib->ensure_grad();
        for (int j = 0; j < q; ++j) ib->grad[static_cast<std::size_t>(i) * q + j] += g[p + j];
      }
    }
  });
}

Tensor transpose2d(const Tensor& x) {
  if (x.ndim() != 2) throw std::invalid_argument("transpose2d: expected 2-D tensor");
  int m = x.dim(0), n = x.dim(1);
  std::vector<float> out(x.numel());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out[static_cast<std::size_t>(j) * m + i] = x.data()[static_cast<std::size_t>(i) * n + j];
    }
  }
  auto ix = x.impl();
  return make_result({n, m}, std::move(out), {x}, [ix, m, n](TensorImpl& self) {
    if (!wants_grad(ix)) return;
    ix->ensure_grad();
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        ix->grad[static_cast<std::size_t>(i) * n + j] += self.grad[static_cast<std::size_t>(j) * m + i];
      }
    }
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
  if (x.ndim() != 2) throw std::invalid_argument("gather_rows: expected 2-D tensor");
  int cols = x.dim(1), rows = x.dim(0);
  std::vector<float> out(idx.size() * static_cast<std::size_t>(cols));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= rows) throw std::out_of_range("gather_rows: index out of range");
    std::memcpy(&out[i * cols], x.data() + static_cast<std::size_t>(idx[i]) * cols,
                sizeof(float) * cols);
  }
  auto ix = x.impl();
  auto indices = idx;
  return make_result({static_cast<int>(idx.size()), cols}, std::move(out), {x},
                     [ix, indices, cols](TensorImpl& self) {
                       if (!wants_grad(ix)) return;
                       ix->ensure_grad();
                       for (std::size_t i = 0; i < indices.size(); ++i) {
                         float* dst = &ix->grad[static_cast<std::size_t>(indices[i]) * cols];
                         const float* g = &self.grad[i * cols];
                         for (int j = 0; j < cols; ++j) dst[j] += g[j];
                       }
                     });
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  if (n != x.numel()) {
    throw std::invalid_argument("reshape: numel mismatch " + shape_str(x.shape()) + " -> " +
                                shape_str(shape));
  }
  std::vector<float> out(x.data(), x.data() + x.numel());
  auto ix = x.impl();
  return make_result(std::move(shape), std::move(out), {x}, [ix](TensorImpl& self) {
    if (!wants_grad(ix)) return;
    ix->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ix->grad[i] += self.grad[i];
  });
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  const float* p = x.data();
  for (std::size_t i = 0; i < x.numel(); ++i) acc += p[i];
  auto ix = x.impl();
  return make_result({1}, {static_cast<float>(acc)}, {x}, [ix](TensorImpl& self) {
    if (!wants_grad(ix)) return;
    ix->ensure_grad();
    float g = self.grad[0];
    for (std::size_t i = 0; i < ix->grad.size(); ++i) ix->grad[i] += g;
  });
}

Tensor softmax_rows(const Tensor& x) {
  if (x.ndim() != 2) throw std::invalid_argument("softmax_rows: expected 2-D tensor");
  int n = x.dim(0), c = x.dim(1);
  std::vector<float> out(x.numel());
  for (int i = 0; i < n; ++i) {
    const float* row = x.data() + static_cast<std::size_t>(i) * c;
    float* orow = &out[static_cast<std::size_t>(i) * c];
    float mx = *std::max_element(row, row + c);
    double denom = 0.0;
    for (int j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    for (int j = 0; j < c; ++j) orow[j] = static_cast<float>(orow[j] / denom);
  }
  auto ix = x.impl();
  return make_result({n, c}, std::move(out), {x}, [ix, n, c](TensorImpl& self) {
    if (!wants_grad(ix)) return;
    ix->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const float* y = &self.data[static_cast<std::size_t>(i) * c];
      const float* g = &self.grad[static_cast<std::size_t>(i) * c];
      float dot = 0.0f;
      for (int j = 0; j < c; ++j) dot += y[j] * g[j];
      float* gx = &ix->grad[static_cast<std::size_t>(i) * c];
      for (int j = 0; j < c; ++j) gx[j] += (g[j] - dot) * y[j];
    }
  });
}

Tensor softmax_ce_mean(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw std::invalid_argument("softmax_ce_mean: expected 2-D logits");
  int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw std::invalid_argument("softmax_ce_mean: label count mismatch");
  }
  for (int l : labels) {
    if (l < 0 || l >= c) throw std::out_of_range("softmax_ce_mean: label out of range");
  }
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const float* row = logits.data() + static_cast<std::size_t>(i) * c;
    float mx = *std::max_element(row, row + c);
    double denom = 0.0;
    for (int j = 0; j < c; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
    loss += std::log(denom) + mx - row[labels[i]];
  }
  loss /= std::max(n, 1);
  auto il = logits.impl();
  auto lab = labels;
  return make_result({1}, {static_cast<float>(loss)}, {logits}, [il, lab, n, c](TensorImpl& self) {
    if (!wants_grad(il)) return;
    il->ensure_grad();
    float g = self.grad[0] / static_cast<float>(std::max(n, 1));
    for (int i = 0; i < n; ++i) {
      const float* row = &il->data[static_cast<std::size_t>(i) * c];
      float* grow = &il->grad[static_cast<std::size_t>(i) * c];
      float mx = *std::max_element(row, row + c);
      double denom = 0.0;
      for (int j = 0; j < c; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
      for (int j = 0; j < c; ++j) {
        float p = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / denom);
        grow[j] += g * (p - (j == lab[i] ? 1.0f : 0.0f));
      }
    }
  });
}

Tensor bce_logits_mean(const Tensor& logits, const std::vector<float>& targets) {
  if (logits.numel() != targets.size()) {
    throw std::invalid_argument("bce_logits_mean: target count mismatch");
  }
  std::size_t n = logits.numel();
  double loss = 0.0;
  const float* x = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    // max(x,0) - x*t + log(1 + exp(-|x|)) is the overflow-safe form.
    loss += std::max(x[i], 0.0f) - x[i] * targets[i] + std::log1p(std::exp(-std::fabs(x[i])));
  }
  loss /= std::max<std::size_t>(n, 1);
  auto il = logits.impl();
  auto t = targets;
  return make_result({1}, {static_cast<float>(loss)}, {logits}, [il, t, n](TensorImpl& self) {
    if (!wants_grad(il)) return;
    il->ensure_grad();
    float g = self.grad[0] / static_cast<float>(std::max<std::size_t>(n, 1));
    for (std::size_t i = 0; i < n; ++i) {
      float sig = 1.0f / (1.0f + std::exp(-il->data[i]));
      il->grad[i] += g * (sig - t[i]);
    }
  });
}

Tensor smooth_l1_weighted_sum(const Tensor& pred, const std::vector<float>& target,
                              const std::vector<float>& weight, float beta) {
  if (pred.numel() != target.size() || pred.numel() != weight.size()) {
    throw std::invalid_argument("smooth_l1_weighted_sum: size mismatch");
  }
  if (beta <= 0.0f) throw std::invalid_argument("smooth_l1_weighted_sum: beta must be positive");
  std::size_t n = pred.numel();
  double loss = 0.0;
  const float* p = pred.data();
  for (std::size_t i = 0; i < n; ++i) {
    float d = p[i] - target[i];
    float a = std::fabs(d);
    float v = a < beta ? 0.5f * d * d / beta : a - 0.5f * beta;
    loss += static_cast<double>(weight[i]) * v;
  }
  auto ip = pred.impl();
  auto t = target;
  auto w = weight;
  return make_result({1}, {static_cast<float>(loss)}, {pred}, [ip, t, w, beta, n](TensorImpl& self) {
    if (!wants_grad(ip)) return;
    ip->ensure_grad();
    float g = self.grad[0];
    for (std::size_t i = 0; i < n; ++i) {
      float d = ip->data[i] - t[i];
      float deriv = std::fabs(d) < beta ? d / beta : (d > 0.0f ? 1.0f : -1.0f);
      ip->grad[i] += g * w[i] * deriv;
    }
  });
}

}  // namespace refdet
