#pragma once

#include <array>
#include <vector>

#include "refdet/tensor.hpp"

namespace refdet {

// Elementwise (shapes must match exactly).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor relu(const Tensor& a);
Tensor sqrt_elem(const Tensor& a);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

// x: [n,in], w: [out,in], b: [out] (b may be undefined) -> [n,out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// x: [N,Cin,H,W], w: [Cout,Cin,K,K], b: [Cout] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

// Transposed convolution. w: [Cin,Cout,K,K]. Output spatial size is given
// explicitly; it must satisfy out = (in-1)*stride - 2*pad + k + op with
// op in [0, stride).
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
                        int out_h, int out_w);

// Per-channel batch norm over (N,H,W). Running stats are plain tensors
// updated in place when training=true; they never carry gradients.
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, bool training, float momentum,
                    float eps);

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, float eps);

// Bilinear resize with align_corners=false sampling; exact x2 when
// out == 2*in.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);

// Row-wise concatenation/gathering over 2-D tensors.
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& x);
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);

Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor sum_all(const Tensor& x);  // -> scalar

// Row-wise softmax of [n,c].
Tensor softmax_rows(const Tensor& x);

// Mean cross-entropy over rows of [n,c] logits; labels in [0,c).
Tensor softmax_ce_mean(const Tensor& logits, const std::vector<int>& labels);

// Mean binary CE with logits; targets in {0,1}, one per element.
Tensor bce_logits_mean(const Tensor& logits, const std::vector<float>& targets);

// Sum of w_i * smoothL1(pred_i - target_i) with beta = 1:
// 0.5 x^2 for |x| < beta, |x| - 0.5 beta otherwise.
Tensor smooth_l1_weighted_sum(const Tensor& pred, const std::vector<float>& target,
                              const std::vector<float>& weight, float beta = 1.0f);

// ROI-Align over a single level x: [1,C,H,W]. Boxes are (x1,y1,x2,y2) in
// input-image pixels; spatial_scale maps them to feature coordinates.
// sampling_ratio x sampling_ratio points per bin, averaged
// (torchvision aligned=false semantics). Degenerate boxes are clamped to
// 1 px in image space.
Tensor roi_align(const Tensor& x, const std::vector<std::array<float, 4>>& boxes,
                 float spatial_scale, int out_size, int sampling_ratio);

}  // namespace refdet
