#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace refdet {

class Tensor;
struct TensorImpl;

// Reverse-mode autograd over dense float32 tensors. Graphs are built
// define-by-run: every op returns a fresh tensor whose impl remembers its
// parents and a backward closure. Gradients accumulate into `grad` until
// zero_grad(), so looping backward() over a mini-batch sums gradients.
struct TensorImpl {
  std::vector<int> shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward;

  std::size_t numel() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<float> values,
                          bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const;
  int dim(int i) const;
  int ndim() const;
  std::size_t numel() const;

  float* data();
  const float* data() const;
  float item() const;
  float& at(std::size_t i);
  float at(std::size_t i) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);
  float* grad();             // materializes a zero grad buffer on demand
  const float* grad() const; // nullptr when never touched
  bool has_grad() const;
  void zero_grad();

  // Backpropagate from this tensor. Must be a scalar (numel == 1).
  void backward();

  Tensor clone() const;  // detached deep copy

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Thread-local graph recording switch. Inference paths wrap themselves in a
// NoGradGuard so no graph nodes are kept alive.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

std::string shape_str(const std::vector<int>& shape);

}  // namespace refdet
