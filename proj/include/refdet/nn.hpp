#pragma once

#include <string>
#include <utility>
#include <vector>

#include "refdet/rng.hpp"
#include "refdet/tensor.hpp"

namespace refdet::nn {

// Ordered registry of named parameters and buffers. Layers register their
// tensors at construction; checkpointing and the optimizer walk the same
// ordered list, which keeps save/load and update order deterministic.
class ParamStore {
 public:
  Tensor add_param(const std::string& name, Tensor t);
  Tensor add_buffer(const std::string& name, Tensor t);

  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& buffers() const { return buffers_; }
  std::vector<Tensor> param_tensors() const;
  std::size_t param_count() const;  // total scalar count

  // Scalar count over parameters whose name starts with the prefix.
  std::size_t param_count_prefix(const std::string& prefix) const;

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::pair<std::string, Tensor>> buffers_;
};

enum class Init { kKaiming, kNormal001, kZero };

struct Conv2d {
  Tensor w, b;
  int stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, int cin, int cout, int k, int stride, int pad,
         Rng& rng, Init init = Init::kKaiming);
  Tensor forward(const Tensor& x) const;
};

// Transposed convolution; callers pass the exact target spatial size, which
// stands in for output_padding.
struct Deconv2d {
  Tensor w, b;
  int stride = 1, pad = 0;

  Deconv2d() = default;
  Deconv2d(ParamStore& store, const std::string& name, int cin, int cout, int k, int stride,
           int pad, Rng& rng);
  Tensor forward(const Tensor& x, int out_h, int out_w) const;
};

// Channel normalization: "batchnorm", "groupnorm", or "none".
struct Norm2d {
  std::string kind = "none";
  Tensor gamma, beta, running_mean, running_var;
  int groups = 8;
  float momentum = 0.1f;
  float eps = 1e-5f;

  Norm2d() = default;
  Norm2d(ParamStore& store, const std::string& name, int channels, const std::string& kind);
  Tensor forward(const Tensor& x, bool training);
};

struct Linear {
  Tensor w, b;

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng,
         Init init = Init::kKaiming);
  Tensor forward(const Tensor& x) const;
};

// Scales all gradients in place so their global L2 norm is at most max_norm
// and returns the pre-clip norm. A non-finite norm zeroes every gradient
// instead: one exploded step must not be allowed to poison the weights.
float clip_grad_norm(const std::vector<Tensor>& params, float max_norm);

// SGD with momentum and decoupled-from-nothing classic L2 weight decay:
// v = mu*v + (g + wd*p); p -= lr*v.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, float lr, float momentum, float weight_decay);

  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }
  void step();
  void zero_grad();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> velocity_;
  float lr_, momentum_, weight_decay_;
};

}  // namespace refdet::nn
