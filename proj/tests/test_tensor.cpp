#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "refdet/ops.hpp"
#include "refdet/tensor.hpp"

using namespace refdet;

TEST_CASE("tensor construction and element access") {
  Tensor t = Tensor::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.ndim() == 2);
  CHECK(t.dim(0) == 2);
  CHECK(t.dim(-1) == 3);
  t.data()[4] = 2.5f;
  CHECK(t.at(4) == doctest::Approx(2.5f));

  Tensor f = Tensor::full({4}, 1.5f);
  for (int i = 0; i < 4; ++i) CHECK(f.at(i) == doctest::Approx(1.5f));

  Tensor s = Tensor::scalar(3.0f);
  CHECK(s.numel() == 1);
  CHECK(s.item() == doctest::Approx(3.0f));
}

TEST_CASE("backward accumulates through a reused node") {
  // y = (a + a) * a = 2a^2, dy/da = 4a
  Tensor a = Tensor::full({1}, 3.0f, true);
  Tensor y = mul(add(a, a), a);
  y.backward();
  CHECK(a.grad()[0] == doctest::Approx(12.0f));
}

TEST_CASE("gradients accumulate across backward calls until zeroed") {
  Tensor a = Tensor::full({1}, 2.0f, true);
  Tensor y1 = mul(a, a);
  y1.backward();
  CHECK(a.grad()[0] == doctest::Approx(4.0f));
  Tensor y2 = mul(a, a);
  y2.backward();
  CHECK(a.grad()[0] == doctest::Approx(8.0f));
  a.zero_grad();
  CHECK(a.grad()[0] == doctest::Approx(0.0f));
}

TEST_CASE("no-grad guard stops recording") {
  Tensor a = Tensor::full({1}, 2.0f, true);
  {
    NoGradGuard g;
    Tensor y = mul(a, a);
    CHECK_FALSE(y.requires_grad());
  }
  Tensor y = mul(a, a);
  CHECK(y.requires_grad());
}

TEST_CASE("clone detaches from the graph") {
  Tensor a = Tensor::full({2}, 1.0f, true);
  Tensor c = a.clone();
  CHECK_FALSE(c.requires_grad());
  c.data()[0] = 9.0f;
  CHECK(a.at(0) == doctest::Approx(1.0f));
}

TEST_CASE("backward handles a deep chain iteratively") {
  // 4000 chained adds would overflow the stack with naive recursion.
  Tensor a = Tensor::full({1}, 1.0f, true);
  Tensor y = a;
  for (int i = 0; i < 4000; ++i) y = add(y, a);
  y = sum_all(y);
  y.backward();
  CHECK(a.grad()[0] == doctest::Approx(4001.0f));
}

TEST_CASE("backward on non-scalar throws") {
  Tensor a = Tensor::full({2}, 1.0f, true);
  Tensor y = add(a, a);
  CHECK_THROWS(y.backward());
}
