#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "refdet/tensor.hpp"

namespace refdet {
namespace detail {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline bool any_requires_grad(const std::vector<Tensor>& parents) {
  if (!grad_enabled()) return false;
  for (const auto& p : parents) {
    if (p.defined() && p.requires_grad()) return true;
  }
  return false;
}

// Builds the result node. The backward closure is only attached when the
// graph is being recorded.
inline Tensor make_result(std::vector<int> shape, std::vector<float> data,
                          std::vector<Tensor> parents,
                          std::function<void(TensorImpl&)> backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  if (any_requires_grad(parents)) {
    impl->requires_grad = true;
    impl->parents.reserve(parents.size());
    for (const auto& p : parents) {
      if (p.defined()) impl->parents.push_back(p.impl());
    }
    impl->backward = std::move(backward);
  }
  return Tensor(std::move(impl));
}

inline bool wants_grad(const std::shared_ptr<TensorImpl>& t) {
  return t && t->requires_grad;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail
}  // namespace refdet
