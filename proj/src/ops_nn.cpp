#include <algorithm>
#include <cmath>
#include <cstring>

#include "ops_common.hpp"
#include "refdet/ops.hpp"

namespace refdet {

using detail::CMapMat;
using detail::MapMat;
using detail::make_result;
using detail::wants_grad;

namespace {

inline int conv_out_size(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// col layout: [C*K*K, OH*OW], row index (c*K + kh)*K + kw.
void im2col(const float* x, int C, int H, int W, int K, int stride, int pad, int OH, int OW,
            float* col) {
  for (int c = 0; c < C; ++c) {
    for (int kh = 0; kh < K; ++kh) {
      for (int kw = 0; kw < K; ++kw) {
        float* dst = col + (static_cast<std::size_t>((c * K + kh) * K + kw)) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          int ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= H) {
            std::memset(dst + static_cast<std::size_t>(oh) * OW, 0, sizeof(float) * OW);
            continue;
          }
          const float* src = x + (static_cast<std::size_t>(c) * H + ih) * W;
          float* drow = dst + static_cast<std::size_t>(oh) * OW;
          for (int ow = 0; ow < OW; ++ow) {
            int iw = ow * stride - pad + kw;
            drow[ow] = (iw >= 0 && iw < W) ? src[iw] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_accum(const float* col, int C, int H, int W, int K, int stride, int pad, int OH, int OW,
                  float* x) {
  for (int c = 0; c < C; ++c) {
    for (int kh = 0; kh < K; ++kh) {
      for (int kw = 0; kw < K; ++kw) {
        const float* src = col + (static_cast<std::size_t>((c * K + kh) * K + kw)) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          int ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= H) continue;
          float* dst = x + (static_cast<std::size_t>(c) * H + ih) * W;
          const float* srow = src + static_cast<std::size_t>(oh) * OW;
          for (int ow = 0; ow < OW; ++ow) {
            int iw = ow * stride - pad + kw;
            if (iw >= 0 && iw < W) dst[iw] += srow[ow];
          }
        }
      }
    }
  }
}

struct ResizeCoef {
  std::vector<int> lo, hi;
  std::vector<float> w_hi;
};

// align_corners=false source coordinates, clamped at borders.
ResizeCoef resize_coef(int in, int out) {
  ResizeCoef c;
  c.lo.resize(out);
  c.hi.resize(out);
  c.w_hi.resize(out);
  double s = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * s - 0.5;
    src = std::max(0.0, std::min(src, static_cast<double>(in - 1)));
    int lo = static_cast<int>(src);
    int hi = std::min(lo + 1, in - 1);
    c.lo[i] = lo;
    c.hi[i] = hi;
    c.w_hi[i] = static_cast<float>(src - lo);
  }
  return c;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  if (x.ndim() != 4 || w.ndim() != 4) throw std::invalid_argument("conv2d: expected 4-D tensors");
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int Cout = w.dim(0), K = w.dim(2);
  if (w.dim(1) != C || w.dim(3) != K) {
    throw std::invalid_argument("conv2d: weight " + shape_str(w.shape()) + " does not match input " +
                                shape_str(x.shape()));
  }
  int OH = conv_out_size(H, K, stride, pad);
  int OW = conv_out_size(W, K, stride, pad);
  if (OH <= 0 || OW <= 0) throw std::invalid_argument("conv2d: output would be empty");

  std::size_t col_rows = static_cast<std::size_t>(C) * K * K;
  std::size_t col_cols = static_cast<std::size_t>(OH) * OW;
  // Cached for the backward pass: dW = dY * col^T.
  auto cols = std::make_shared<std::vector<float>>(static_cast<std::size_t>(N) * col_rows * col_cols);
  std::vector<float> out(static_cast<std::size_t>(N) * Cout * col_cols);

  for (int n = 0; n < N; ++n) {
    float* col = cols->data() + static_cast<std::size_t>(n) * col_rows * col_cols;
    im2col(x.data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, K, stride, pad, OH, OW, col);
    CMapMat mw(w.data(), Cout, static_cast<int>(col_rows));
    CMapMat mc(col, static_cast<int>(col_rows), static_cast<int>(col_cols));
    MapMat mo(out.data() + static_cast<std::size_t>(n) * Cout * col_cols, Cout,
              static_cast<int>(col_cols));
    mo.noalias() = mw * mc;
    if (b.defined()) {
      for (int co = 0; co < Cout; ++co) {
        float bias = b.data()[co];
        float* row = out.data() + (static_cast<std::size_t>(n) * Cout + co) * col_cols;
        for (std::size_t i = 0; i < col_cols; ++i) row[i] += bias;
      }
    }
  }

  auto ix = x.impl();
  auto iw = w.impl();
  auto ib = b.defined() ? b.impl() : nullptr;
  return make_result(
      {N, Cout, OH, OW}, std::move(out), {x, w, b},
      [ix, iw, ib, cols, N, C, H, W, Cout, K, stride, pad, OH, OW, col_rows,
       col_cols](TensorImpl& self) {
        std::vector<float> dcol;
        for (int n = 0; n < N; ++n) {
          CMapMat g(self.grad.data() + static_cast<std::size_t>(n) * Cout * col_cols, Cout,
                    static_cast<int>(col_cols));
          const float* col = cols->data() + static_cast<std::size_t>(n) * col_rows * col_cols;
          if (wants_grad(iw)) {
            iw->ensure_grad();
            MapMat gw(iw->grad.data(), Cout, static_cast<int>(col_rows));
            CMapMat mc(col, static_cast<int>(col_rows), static_cast<int>(col_cols));
            gw.noalias() += g * mc.transpose();
          }
          if (wants_grad(ib)) {
            ib->ensure_grad();
            for (int co = 0; co < Cout; ++co) {
              const float* row = self.grad.data() + (static_cast<std::size_t>(n) * Cout + co) * col_cols;
              double acc = 0.0;
              for (std::size_t i = 0; i < col_cols; ++i) acc += row[i];
              ib->grad[co] += static_cast<float>(acc);
            }
          }
          if (wants_grad(ix)) {
            ix->ensure_grad();
            dcol.assign(col_rows * col_cols, 0.0f);
            MapMat mdc(dcol.data(), static_cast<int>(col_rows), static_cast<int>(col_cols));
            CMapMat mw(iw->data.data(), Cout, static_cast<int>(col_rows));
            mdc.noalias() = mw.transpose() * g;
            col2im_accum(dcol.data(), C, H, W, K, stride, pad, OH, OW,
                         ix->grad.data() + static_cast<std::size_t>(n) * C * H * W);
          }
        }
      });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
                        int out_h, int out_w) {
  if (x.ndim() != 4 || w.ndim() != 4) {
    throw std::invalid_argument("conv_transpose2d: expected 4-D tensors");
  }
  int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  int Cout = w.dim(1), K = w.dim(2);
  if (w.dim(0) != Cin || w.dim(3) != K) {
    throw std::invalid_argument("conv_transpose2d: weight " + shape_str(w.shape()) +
                                " does not match input " + shape_str(x.shape()));
  }
  int base_h = (H - 1) * stride - 2 * pad + K;
  int base_w = (W - 1) * stride - 2 * pad + K;
  if (out_h < base_h || out_h >= base_h + stride || out_w < base_w || out_w >= base_w + stride) {
    throw std::invalid_argument("conv_transpose2d: requested output size not reachable");
  }

  std::size_t col_rows = static_cast<std::size_t>(Cout) * K * K;
  std::size_t col_cols = static_cast<std::size_t>(H) * W;
  std::vector<float> out(static_cast<std::size_t>(N) * Cout * out_h * out_w, 0.0f);
  std::vector<float> col(col_rows * col_cols);

  for (int n = 0; n < N; ++n) {
    CMapMat mw(w.data(), Cin, static_cast<int>(col_rows));
    CMapMat mx(x.data() + static_cast<std::size_t>(n) * Cin * col_cols, Cin,
               static_cast<int>(col_cols));
    MapMat mc(col.data(), static_cast<int>(col_rows), static_cast<int>(col_cols));
    mc.noalias() = mw.transpose() * mx;
    col2im_accum(col.data(), Cout, out_h, out_w, K, stride, pad, H, W,
                 out.data() + static_cast<std::size_t>(n) * Cout * out_h * out_w);
    if (b.defined()) {
      for (int co = 0; co < Cout; ++co) {
        float bias = b.data()[co];
        float* plane = out.data() + (static_cast<std::size_t>(n) * Cout + co) * out_h * out_w;
        for (int i = 0; i < out_h * out_w; ++i) plane[i] += bias;
      }
    }
  }

  auto ix = x.impl();
  auto iw = w.impl();
  auto ib = b.defined() ? b.impl() : nullptr;
  return make_result(
      {N, Cout, out_h, out_w}, std::move(out), {x, w, b},
      [ix, iw, ib, N, Cin, H, W, Cout, K, stride, pad, out_h, out_w, col_rows,
       col_cols](TensorImpl& self) {
        std::vector<float> dcol(col_rows * col_cols);
        for (int n = 0; n < N; ++n) {
          // dcol = im2col(dY) reuses the forward geometry: the deconv output
          // plays the role of the conv input.
          im2col(self.grad.data() + static_cast<std::size_t>(n) * Cout * out_h * out_w, Cout, out_h,
                 out_w, K, stride, pad, H, W, dcol.data());
          CMapMat mdc(dcol.data(), static_cast<int>(col_rows), static_cast<int>(col_cols));
          if (wants_grad(ix)) {
            ix->ensure_grad();
            MapMat gx(ix->grad.data() + static_cast<std::size_t>(n) * Cin * col_cols, Cin,
                      static_cast<int>(col_cols));
            CMapMat mw(iw->data.data(), Cin, static_cast<int>(col_rows));
            gx.noalias() += mw * mdc;
          }
          if (wants_grad(iw)) {
            iw->ensure_grad();
            MapMat gw(iw->grad.data(), Cin, static_cast<int>(col_rows));
            CMapMat mx(ix->data.data() + static_cast<std::size_t>(n) * Cin * col_cols, Cin,
                       static_cast<int>(col_cols));
            gw.noalias() += mx * mdc.transpose();
          }
          if (wants_grad(ib)) {
            ib->ensure_grad();
            for (int co = 0; co < Cout; ++co) {
              const float* plane =
                  self.grad.data() + (static_cast<std::size_t>(n) * Cout + co) * out_h * out_w;
              double acc = 0.0;
              for (int i = 0; i < out_h * out_w; ++i) acc += plane[i];
              ib->grad[co] += static_cast<float>(acc);
            }
          }
        }
      });
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                    Tensor& running_var, bool training, float momentum, float eps) {
  if (x.ndim() != 4) throw std::invalid_argument("batch_norm2d: expected 4-D input");
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::size_t plane = static_cast<std::size_t>(H) * W;
  std::size_t m = static_cast<std::size_t>(N) * plane;

  std::vector<float> mean(C), inv_std(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int n = 0; n < N; ++n) {
        const float* p = x.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      double mu = acc / m;
      double var = 0.0;
      for (int n = 0; n < N; ++n) {
        const float* p = x.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          double d = p[i] - mu;
          var += d * d;
        }
      }
      var /= m;
      mean[c] = static_cast<float>(mu);
      inv_std[c] = static_cast<float>(1.0 / std::sqrt(var + eps));
      double unbiased = m > 1 ? var * m / (m - 1.0) : var;
      float mu_f = static_cast<float>(mu);
      float var_f = static_cast<float>(unbiased);
      // Never fold a non-finite batch into the running stats: the EMA can't
      // decay inf/NaN away, so one exploded batch would corrupt eval mode
      // for every step after it.
      if (std::isfinite(mu_f) && std::isfinite(var_f)) {
        running_mean.data()[c] = (1.0f - momentum) * running_mean.data()[c] + momentum * mu_f;
        running_var.data()[c] = (1.0f - momentum) * running_var.data()[c] + momentum * var_f;
      }
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = running_mean.data()[c];
      inv_std[c] = 1.0f / std::sqrt(running_var.data()[c] + eps);
    }
  }

  std::vector<float> out(x.numel());
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const float* p = x.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      float* o = &out[(static_cast<std::size_t>(n) * C + c) * plane];
      float g = gamma.data()[c], bb = beta.data()[c], mu = mean[c], is = inv_std[c];
      for (std::size_t i = 0; i < plane; ++i) o[i] = (p[i] - mu) * is * g + bb;
    }
  }

  auto ix = x.impl();
  auto ig = gamma.impl();
  auto ibt = beta.impl();
  auto mean_s = std::make_shared<std::vector<float>>(std::move(mean));
  auto inv_s = std::make_shared<std::vector<float>>(std::move(inv_std));
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [ix, ig, ibt, mean_s, inv_s, N, C, plane, m, training](TensorImpl& self) {
        for (int c = 0; c < C; ++c) {
          float mu = (*mean_s)[c], is = (*inv_s)[c], gam = ig->data[c];
          // Per-channel reductions over (N,H,W).
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int n = 0; n < N; ++n) {
            const float* xd = &ix->data[(static_cast<std::size_t>(n) * C + c) * plane];
            const float* gd = &self.grad[(static_cast<std::size_t>(n) * C + c) * plane];
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy += gd[i];
              sum_dy_xhat += gd[i] * (xd[i] - mu) * is;
            }
          }
          if (wants_grad(ig)) {
            ig->ensure_grad();
            ig->grad[c] += static_cast<float>(sum_dy_xhat);
          }
          if (wants_grad(ibt)) {
            ibt->ensure_grad();
            ibt->grad[c] += static_cast<float>(sum_dy);
          }
          if (wants_grad(ix)) {
            ix->ensure_grad();
            if (training) {
              float inv_m = 1.0f / static_cast<float>(m);
              for (int n = 0; n < N; ++n) {
                const float* xd = &ix->data[(static_cast<std::size_t>(n) * C + c) * plane];
                const float* gd = &self.grad[(static_cast<std::size_t>(n) * C + c) * plane];
                float* gx = &ix->grad[(static_cast<std::size_t>(n) * C + c) * plane];
                for (std::size_t i = 0; i < plane; ++i) {
                  float xhat = (xd[i] - mu) * is;
                  gx[i] += gam * is *
                           (gd[i] - inv_m * static_cast<float>(sum_dy) -
                            xhat * inv_m * static_cast<float>(sum_dy_xhat));
                }
              }
            } else {
              for (int n = 0; n < N; ++n) {
                const float* gd = &self.grad[(static_cast<std::size_t>(n) * C + c) * plane];
                float* gx = &ix->grad[(static_cast<std::size_t>(n) * C + c) * plane];
                for (std::size_t i = 0; i < plane; ++i) gx[i] += gd[i] * gam * is;
              }
            }
          }
        }
      });
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, float eps) {
  if (x.ndim() != 4) throw std::invalid_argument("group_norm: expected 4-D input");
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (groups <= 0 || C % groups != 0) throw std::invalid_argument("group_norm: bad group count");
  int cpg = C / groups;
  std::size_t plane = static_cast<std::size_t>(H) * W;
  std::size_t m = static_cast<std::size_t>(cpg) * plane;

  std::vector<float> mean(static_cast<std::size_t>(N) * groups), inv_std(mean.size());
  std::vector<float> out(x.numel());
  for (int n = 0; n < N; ++n) {
    for (int g = 0; g < groups; ++g) {
      double acc = 0.0;
      for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
        const float* p = x.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      double mu = acc / m;
      double var = 0.0;
      for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
        const float* p = x.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          double d = p[i] - mu;
          var += d * d;
        }
      }
      var /= m;
      std::size_t gi = static_cast<std::size_t>(n) * groups + g;
      mean[gi] = static_cast<float>(mu);
      inv_std[gi] = static_cast<float>(1.0 / std::sqrt(var + eps));
      for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
        const float* p = x.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        float* o = &out[(static_cast<std::size_t>(n) * C + c) * plane];
        float gam = gamma.data()[c], bb = beta.data()[c];
        for (std::size_t i = 0; i < plane; ++i) {
          o[i] = (p[i] - mean[gi]) * inv_std[gi] * gam + bb;
        }
      }
    }
  }

  auto ix = x.impl();
  auto igm = gamma.impl();
  auto ibt = beta.impl();
  auto mean_s = std::make_shared<std::vector<float>>(std::move(mean));
  auto inv_s = std::make_shared<std::vector<float>>(std::move(inv_std));
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [ix, igm, ibt, mean_s, inv_s, N, C, cpg, groups, plane, m](TensorImpl& self) {
        for (int n = 0; n < N; ++n) {
          for (int g = 0; g < groups; ++g) {
            std::size_t gi = static_cast<std::size_t>(n) * groups + g;
            float mu = (*mean_s)[gi], is = (*inv_s)[gi];
            double sum_dyg = 0.0, sum_dyg_xhat = 0.0;
            for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
              const float* xd = &ix->data[(static_cast<std::size_t>(n) * C + c) * plane];
              const float* gd = &self.grad[(static_cast<std::size_t>(n) * C + c) * plane];
              float gam = igm->data[c];
              double s_dy = 0.0, s_dy_xhat = 0.0;
              for (std::size_t i = 0; i < plane; ++i) {
                float xhat = (xd[i] - mu) * is;
                s_dy += gd[i];
                s_dy_xhat += gd[i] * xhat;
              }
              if (wants_grad(igm)) {
                igm->ensure_grad();
                igm->grad[c] += static_cast<float>(s_dy_xhat);
              }
              if (wants_grad(ibt)) {
                ibt->ensure_grad();
                ibt->grad[c] += static_cast<float>(s_dy);
              }
              sum_dyg += gam * s_dy;
              sum_dyg_xhat += gam * s_dy_xhat;
            }
            if (wants_grad(ix)) {
              ix->ensure_grad();
              float inv_m = 1.0f / static_cast<float>(m);
              for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
                const float* xd = &ix->data[(static_cast<std::size_t>(n) * C + c) * plane];
                const float* gd = &self.grad[(static_cast<std::size_t>(n) * C + c) * plane];
                float* gx = &ix->grad[(static_cast<std::size_t>(n) * C + c) * plane];
                float gam = igm->data[c];
                for (std::size_t i = 0; i < plane; ++i) {
                  float xhat = (xd[i] - mu) * is;
                  gx[i] += is * (gam * gd[i] - inv_m * static_cast<float>(sum_dyg) -
                                 xhat * inv_m * static_cast<float>(sum_dyg_xhat));
                }
              }
            }
          }
        }
      });
}

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  if (x.ndim() != 4) throw std::invalid_argument("bilinear_resize: expected 4-D input");
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("bilinear_resize: bad output size");
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  ResizeCoef ch = resize_coef(H, out_h);
  ResizeCoef cw = resize_coef(W, out_w);

  std::vector<float> out(static_cast<std::size_t>(N) * C * out_h * out_w);
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const float* p = x.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
      float* o = &out[(static_cast<std::size_t>(n) * C + c) * out_h * out_w];
      for (int i = 0; i < out_h; ++i) {
        const float wy = ch.w_hi[i];
        const float* r0 = p + static_cast<std::size_t>(ch.lo[i]) * W;
        const float* r1 = p + static_cast<std::size_t>(ch.hi[i]) * W;
        for (int j = 0; j < out_w; ++j) {
          const float wx = cw.w_hi[j];
          float top = r0[cw.lo[j]] * (1.0f - wx) + r0[cw.hi[j]] * wx;
          float bot = r1[cw.lo[j]] * (1.0f - wx) + r1[cw.hi[j]] * wx;
          o[static_cast<std::size_t>(i) * out_w + j] = top * (1.0f - wy) + bot * wy;
        }
      }
    }
  }

  auto ix = x.impl();
  auto ch_s = std::make_shared<ResizeCoef>(std::move(ch));
  auto cw_s = std::make_shared<ResizeCoef>(std::move(cw));
  return make_result({N, C, out_h, out_w}, std::move(out), {x},
                     [ix, ch_s, cw_s, N, C, H, W, out_h, out_w](TensorImpl& self) {
                       if (!wants_grad(ix)) return;
                       ix->ensure_grad();
                       for (int n = 0; n < N; ++n) {
                         for (int c = 0; c < C; ++c) {
                           float* gx = &ix->grad[(static_cast<std::size_t>(n) * C + c) * H * W];
                           const float* g =
                               &self.grad[(static_cast<std::size_t>(n) * C + c) * out_h * out_w];
                           for (int i = 0; i < out_h; ++i) {
                             float wy = ch_s->w_hi[i];
                             for (int j = 0; j < out_w; ++j) {
                               float wx = cw_s->w_hi[j];
                               float gv = g[static_cast<std::size_t>(i) * out_w + j];
                               gx[static_cast<std::size_t>(ch_s->lo[i]) * W + cw_s->lo[j]] +=
                                   gv * (1.0f - wy) * (1.0f - wx);
                               gx[static_cast<std::size_t>(ch_s->lo[i]) * W + cw_s->hi[j]] +=
                                   gv * (1.0f - wy) * wx;
                               gx[static_cast<std::size_t>(ch_s->hi[i]) * W + cw_s->lo[j]] +=
                                   gv * wy * (1.0f - wx);
                               gx[static_cast<std::size_t>(ch_s->hi[i]) * W + cw_s->hi[j]] +=
                                   gv * wy * wx;
                             }
                           }
                         }
                       }
                     });
}

namespace {

struct BilinearTap {
  int idx[4];
  float w[4];
  bool valid;
};

BilinearTap bilinear_tap(float y, float x, int H, int W) {
  BilinearTap t{};
  if (y < -1.0f || y > static_cast<float>(H) || x < -1.0f || x > static_cast<float>(W)) {
    t.valid = false;
    return t;
  }
  if (y < 0.0f) y = 0.0f;
  if (x < 0.0f) x = 0.0f;
  int y_low = static_cast<int>(y);
  int x_low = static_cast<int>(x);
  int y_high;
  int x_high;
  if (y_low >= H - 1) {
    y_high = y_low = H - 1;
    y = static_cast<float>(y_low);
  } else {
    y_high = y_low + 1;
  }
  if (x_low >= W - 1) {
    x_high = x_low = W - 1;
    x = static_cast<float>(x_low);
  } else {
    x_high = x_low + 1;
  }
  float ly = y - y_low, lx = x - x_low;
  float hy = 1.0f - ly, hx = 1.0f - lx;
  t.idx[0] = y_low * W + x_low;
  t.idx[1] = y_low * W + x_high;
  t.idx[2] = y_high * W + x_low;
  t.idx[3] = y_high * W + x_high;
  t.w[0] = hy * hx;
  t.w[1] = hy * lx;
  t.w[2] = ly * hx;
  t.w[3] = ly * lx;
  t.valid = true;
  return t;
}

}  // namespace

Tensor roi_align(const Tensor& x, const std::vector<std::array<float, 4>>& boxes,
                 float spatial_scale, int out_size, int sampling_ratio) {
  if (x.ndim() != 4 || x.dim(0) != 1) throw std::invalid_argument("roi_align: expected [1,C,H,W]");
  int C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int R = static_cast<int>(boxes.size());
  int S = out_size;
  int G = sampling_ratio;

  // Sample taps are cached so the backward pass scatters the same weights.
  struct RoiPlan {
    std::vector<BilinearTap> taps;  // S*S*G*G per roi
  };
  auto plans = std::make_shared<std::vector<RoiPlan>>(R);
  std::vector<float> out(static_cast<std::size_t>(R) * C * S * S, 0.0f);

  float inv_count = 1.0f / static_cast<float>(G * G);
  for (int r = 0; r < R; ++r) {
    float x1 = boxes[r][0], y1 = boxes[r][1], x2 = boxes[r][2], y2 = boxes[r][3];
    // Degenerate boxes are widened to 1 px around their center.
    if (x2 - x1 < 1.0f) {
      float cx = 0.5f * (x1 + x2);
      x1 = cx - 0.5f;
      x2 = cx + 0.5f;
    }
    if (y2 - y1 < 1.0f) {
      float cy = 0.5f * (y1 + y2);
      y1 = cy - 0.5f;
      y2 = cy + 0.5f;
    }
    float rx1 = x1 * spatial_scale, ry1 = y1 * spatial_scale;
    float rw = std::max((x2 - x1) * spatial_scale, 1.0f);
    float rh = std::max((y2 - y1) * spatial_scale, 1.0f);
    float bin_h = rh / S, bin_w = rw / S;

    RoiPlan& plan = (*plans)[r];
    plan.taps.resize(static_cast<std::size_t>(S) * S * G * G);
    std::size_t t = 0;
    for (int ph = 0; ph < S; ++ph) {
      for (int pw = 0; pw < S; ++pw) {
        for (int iy = 0; iy < G; ++iy) {
          float yy = ry1 + ph * bin_h + (iy + 0.5f) * bin_h / G;
          for (int ix2 = 0; ix2 < G; ++ix2) {
            float xx = rx1 + pw * bin_w + (ix2 + 0.5f) * bin_w / G;
            plan.taps[t++] = bilinear_tap(yy, xx, H, W);
          }
        }
      }
    }
    for (int c = 0; c < C; ++c) {
      const float* p = x.data() + static_cast<std::size_t>(c) * H * W;
      float* o = &out[(static_cast<std::size_t>(r) * C + c) * S * S];
      t = 0;
      for (int bin = 0; bin < S * S; ++bin) {
        float acc = 0.0f;
        for (int s = 0; s < G * G; ++s, ++t) {
          const BilinearTap& tap = plan.taps[t];
          if (!tap.valid) continue;
          acc += tap.w[0] * p[tap.idx[0]] + tap.w[1] * p[tap.idx[1]] + tap.w[2] * p[tap.idx[2]] +
                 tap.w[3] * p[tap.idx[3]];
        }
        o[bin] = acc * inv_count;
      }
    }
  }

  auto ix = x.impl();
  return make_result({R, C, S, S}, std::move(out), {x},
                     [ix, plans, R, C, H, W, S, G, inv_count](TensorImpl& self) {
                       if (!wants_grad(ix)) return;
                       ix->ensure_grad();
                       for (int r = 0; r < R; ++r) {
                         const RoiPlan& plan = (*plans)[r];
                         for (int c = 0; c < C; ++c) {
                           float* gx = &ix->grad[static_cast<std::size_t>(c) * H * W];
                           const float* g = &self.grad[(static_cast<std::size_t>(r) * C + c) * S * S];
                           std::size_t t = 0;
                           for (int bin = 0; bin < S * S; ++bin) {
                             float gv = g[bin] * inv_count;
                             for (int s = 0; s < G * G; ++s, ++t) {
                               const BilinearTap& tap = plan.taps[t];
                               if (!tap.valid) continue;
                               gx[tap.idx[0]] += gv * tap.w[0];
                               gx[tap.idx[1]] += gv * tap.w[1];
                               gx[tap.idx[2]] += gv * tap.w[2];
                               gx[tap.idx[3]] += gv * tap.w[3];
                             }
                           }
                         }
                       }
                     });
}

}  // namespace refdet
