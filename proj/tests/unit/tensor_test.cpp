#include <doctest.h>

#include <cmath>
#include <limits>
#include <thread>

#include "gaze/errors.hpp"
#include "gaze/gradcheck.hpp"
#include "gaze/ops.hpp"
#include "support.hpp"

using namespace gaze;
using test::values;

TEST_SUITE("tensor") {
  TEST_CASE("construction enforces product(shape) == length(data)") {
    CHECK_THROWS_AS(Tensor::from_data({2, 3}, std::vector<float>(5)), ValidationError);
    auto t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == t.shape().numel());
    CHECK(Tensor::scalar(2.0f).shape().rank() == 0);
    CHECK(Tensor::scalar(2.0f).numel() == 1);
  }

  TEST_CASE("non-finite values are rejected at creation and after every op") {
    const float inf = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(Tensor::from_data({2}, {1.0f, std::nanf("")}), NumericalError);
    CHECK_THROWS_AS(Tensor::from_data({1}, {inf}), NumericalError);
    auto big = Tensor::from_data({1}, {3e38f});
    CHECK_THROWS_AS(ops::add(big, big), NumericalError);
    CHECK_THROWS_AS(ops::scale(big, 10.0f), NumericalError);
  }

  TEST_CASE("grad has the value's shape after backward") {
    std::mt19937_64 rng(1);
    auto a = test::randn(rng, {3, 4}, true);
    auto b = test::randn(rng, {4, 2}, true);
    ops::sum(ops::matmul(a, b)).backward();
    CHECK(a.grad().size() == a.numel());
    CHECK(b.grad().size() == b.numel());
  }

  TEST_CASE("f(x) = sum(x^2) has gradient exactly 2x") {
    auto x = Tensor64::from_data({4}, {1.5, -2.0, 0.25, 3.0}, true);
    ops::sum(ops::mul(x, x)).backward();
    for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == 2 * x[i]);
  }

  TEST_CASE("a constant function of x has zero gradient") {
    auto x = Tensor64::from_data({3}, {1, 2, 3}, true);
    ops::sum(ops::scale(x, 0.0)).backward();
    for (double g : x.grad()) CHECK(g == 0.0);
  }

  TEST_CASE("backward rejects non-scalar roots and disconnected graphs") {
    auto x = Tensor::from_data({2}, {1, 2}, true);
    CHECK_THROWS_AS(ops::scale(x, 2.0f).backward(), ValidationError);
    auto c = Tensor::from_data({2}, {1, 2});
    CHECK_THROWS_AS(ops::sum(c).backward(), ValidationError);
  }

  TEST_CASE("each recorded op is visited once, inputs before outputs") {
    auto x = Tensor::from_data({2, 2}, {1, -2, 3, 4}, true);
    auto y = ops::relu(x);
    auto z = ops::add(y, y);  // y feeds z twice
    auto loss = ops::sum(ops::mul(z, y));
    const auto order = recorded_ops(loss);
    CHECK(order.size() == 4);
    for (std::size_t i = 0; i < order.size(); ++i)
      for (std::size_t j = i + 1; j < order.size(); ++j) CHECK(order[i] != order[j]);
    CHECK(order.front() == &y.node());
    CHECK(order.back() == &loss.node());
    loss.backward();
    // d/dx sum(2 y * y) = 4 y relu'(x)
    CHECK(std::vector<float>(x.grad().begin(), x.grad().end()) == std::vector<float>{4, 0, 12, 16});
  }

  TEST_CASE("backward twice with cleared grads yields identical gradients") {
    std::mt19937_64 rng(5);
    auto x = test::randn<double>(rng, {2, 3, 6, 6}, true);
    auto w = test::randn<double>(rng, {4, 3, 3, 3}, true);
    auto b = test::randn<double>(rng, {4}, true);
    auto loss = ops::sum(ops::relu(ops::conv2d(x, w, b, {.dilation = 2})));
    loss.backward();
    const std::vector<double> gx(x.grad().begin(), x.grad().end());
    const std::vector<double> gw(w.grad().begin(), w.grad().end());
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
    loss.backward();
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == gx);
    CHECK(std::vector<double>(w.grad().begin(), w.grad().end()) == gw);
  }

  TEST_CASE("leaf gradients accumulate across backward calls") {
    auto x = Tensor64::from_data({2}, {1, 2}, true);
    auto loss = ops::sum(ops::scale(x, 3.0));
    loss.backward();
    loss.backward();
    CHECK(x.grad()[0] == 6.0);
  }

  TEST_CASE("NoGradGuard records nothing") {
    auto x = Tensor::from_data({2}, {1, 2}, true);
    Tensor y;
    {
      NoGradGuard guard;
      CHECK_FALSE(grad_recording_enabled());
      y = ops::scale(x, 2.0f);
    }
    CHECK(grad_recording_enabled());
    CHECK(y.is_leaf());
    CHECK_FALSE(y.requires_grad());
  }

  TEST_CASE("op outputs are immutable, leaves are writable") {
    auto x = Tensor::from_data({2}, {1, 2}, true);
    auto y = ops::scale(x, 2.0f);
    CHECK_THROWS_AS(y.mutable_data(), ValidationError);
    x.mutable_data()[0] = 5.0f;
    CHECK(x[0] == 5.0f);
  }

  TEST_CASE("tensors built on one thread are usable on another") {
    std::mt19937_64 rng(2);
    auto a = test::randn(rng, {8, 8}, true);
    float from_thread = 0;
    std::thread([&] { from_thread = ops::sum(ops::matmul(a, a)).item(); }).join();
    CHECK(from_thread == ops::sum(ops::matmul(a, a)).item());
  }
}

TEST_SUITE("gradcheck") {
  TEST_CASE("gradcheck passes on a correct gradient and reports a wrong one") {
    auto x = Tensor64::from_data({3}, {0.5, -1.0, 2.0});
    auto good = gradcheck([](const auto& in) { return ops::sum(ops::mul(in[0], in[0])); }, {x});
    CHECK(good.passed);
    CHECK(good.elements_checked == 3);
    CHECK(good.max_rel_error < 1e-8);

    // A hand-made op with a deliberately wrong backward pass.
    auto bad_op = [](const std::vector<Tensor64>& in) {
      const auto& a = in[0];
      std::vector<double> out(a.data().begin(), a.data().end());
      for (auto& v : out) v = v * v;
      auto y = Tensor64::make_result("bad_square", a.shape(), std::move(out), {a}, [](auto& o) {
        auto& g = o.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * o.inputs[0]->value[i];  // x, not 2x
      });
      return ops::sum(y);
    };
    auto bad = gradcheck(bad_op, {x});
    CHECK_FALSE(bad.passed);
    CHECK(bad.violations.size() == 3);
  }

  TEST_CASE("gradcheck rejects a disconnected function") {
    auto x = Tensor64::from_data({2}, {1, 2});
    auto c = Tensor64::from_data({2}, {3, 4});
    CHECK_THROWS_AS(gradcheck([c](const auto&) { return ops::sum(c); }, {x}), ValidationError);
  }

  TEST_CASE("every op and loss passes on three random instances") {
    const auto suite = run_gradcheck_suite(7, 3);
    CHECK(suite.size() >= 30 * 3);
    for (const auto& c : suite) {
      CAPTURE(c.name);
      CHECK(c.report.passed);
      CHECK(c.report.max_rel_error < 1e-5);
    }
  }
}
