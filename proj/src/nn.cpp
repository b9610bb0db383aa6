#include "refdet/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "refdet/ops.hpp"

namespace refdet::nn {

Tensor ParamStore::add_param(const std::string& name, Tensor t) {
  for (const auto& [n, _] : params_) {
    if (n == name) throw std::invalid_argument("duplicate parameter name: " + name);
  }
  t.set_requires_grad(true);
  params_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::add_buffer(const std::string& name, Tensor t) {
  for (const auto& [n, _] : buffers_) {
    if (n == name) throw std::invalid_argument("duplicate buffer name: " + name);
  }
  buffers_.emplace_back(name, t);
  return t;
}

std::vector<Tensor> ParamStore::param_tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [_, t] : params_) out.push_back(t);
  return out;
}

std::size_t ParamStore::param_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

std::size_t ParamStore::param_count_prefix(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) {
    if (name.rfind(prefix, 0) == 0) n += t.numel();
  }
  return n;
}

namespace {

Tensor init_weight(std::vector<int> shape, std::size_t fan_in, Rng& rng, Init init) {
  Tensor t = Tensor::zeros(std::move(shape));
  switch (init) {
    case Init::kKaiming: {
      double std = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (std::size_t i = 0; i < t.numel(); ++i) {
        t.data()[i] = static_cast<float>(rng.normal(0.0, std));
      }
      break;
    }
    case Init::kNormal001:
      for (std::size_t i = 0; i < t.numel(); ++i) {
        t.data()[i] = static_cast<float>(rng.normal(0.0, 0.01));
      }
      break;
    case Init::kZero:
      break;
  }
  return t;
}

}  // namespace

Conv2d::Conv2d(ParamStore& store, const std::string& name, int cin, int cout, int k, int stride_,
               int pad_, Rng& rng, Init init)
    : stride(stride_), pad(pad_) {
  w = store.add_param(name + ".w",
                      init_weight({cout, cin, k, k}, static_cast<std::size_t>(cin) * k * k, rng, init));
  b = store.add_param(name + ".b", Tensor::zeros({cout}));
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }

Deconv2d::Deconv2d(ParamStore& store, const std::string& name, int cin, int cout, int k,
                   int stride_, int pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
  w = store.add_param(name + ".w",
                      init_weight({cin, cout, k, k}, static_cast<std::size_t>(cin) * k * k, rng,
                                  Init::kKaiming));
  b = store.add_param(name + ".b", Tensor::zeros({cout}));
}

Tensor Deconv2d::forward(const Tensor& x, int out_h, int out_w) const {
  return conv_transpose2d(x, w, b, stride, pad, out_h, out_w);
}

Norm2d::Norm2d(ParamStore& store, const std::string& name, int channels, const std::string& kind_)
    : kind(kind_) {
  if (kind == "none") return;
  if (kind != "batchnorm" && kind != "groupnorm") {
    throw std::invalid_argument("Norm2d: unknown kind " + kind);
  }
  gamma = store.add_param(name + ".gamma", Tensor::full({channels}, 1.0f));
  beta = store.add_param(name + ".beta", Tensor::zeros({channels}));
  if (kind == "batchnorm") {
    running_mean = store.add_buffer(name + ".running_mean", Tensor::zeros({channels}));
    running_var = store.add_buffer(name + ".running_var", Tensor::full({channels}, 1.0f));
  } else {
    while (channels % groups != 0) groups /= 2;
  }
}

Tensor Norm2d::forward(const Tensor& x, bool training) {
  if (kind == "none") return x;
  if (kind == "batchnorm") {
    return batch_norm2d(x, gamma, beta, running_mean, running_var, training, momentum, eps);
  }
  return group_norm(x, gamma, beta, groups, eps);
}

Linear::Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng, Init init) {
  w = store.add_param(name + ".w", init_weight({out, in}, static_cast<std::size_t>(in), rng, init));
  b = store.add_param(name + ".b", Tensor::zeros({out}));
}

Tensor Linear::forward(const Tensor& x) const { return linear(x, w, b); }

float clip_grad_norm(const std::vector<Tensor>& params, float max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    const float* g = p.grad();
    for (std::size_t i = 0; i < p.numel(); ++i) sq += static_cast<double>(g[i]) * g[i];
  }
  float norm = static_cast<float>(std::sqrt(sq));
  if (!std::isfinite(norm)) {
    for (Tensor p : params) p.zero_grad();
    return norm;
  }
  if (max_norm > 0.0f && norm > max_norm) {
    float scale = max_norm / norm;
    for (Tensor p : params) {
      if (!p.has_grad()) continue;
      float* g = p.grad();
      for (std::size_t i = 0; i < p.numel(); ++i) g[i] *= scale;
    }
  }
  return norm;
}

Sgd::Sgd(std::vector<Tensor> params, float lr, float momentum, float weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    velocity_[i].assign(params_[i].numel(), 0.0f);
  }
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    const float* g = p.grad();
    float* v = velocity_[i].data();
    float* d = p.data();
    for (std::size_t j = 0; j < p.numel(); ++j) {
      v[j] = momentum_ * v[j] + g[j] + weight_decay_ * d[j];
      d[j] -= lr_ * v[j];
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace refdet::nn
