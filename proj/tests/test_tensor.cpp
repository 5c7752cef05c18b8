#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "cardiofuse/errors.hpp"
#include "cardiofuse/rng.hpp"
#include "cardiofuse/tensor.hpp"
#include "doctest.h"
#include "fd_oracle.hpp"

using namespace cardiofuse;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -2, double hi = 2) {
  Rng rng(seed);
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), true);
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("matmul identity and annihilating products") {
  const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  CHECK(values(matmul(eye, a)) == std::vector<double>{1, 2, 3, 4});
  const Tensor p = Tensor::matrix(2, 2, {1, 0, 0, 0});
  const Tensor q = Tensor::matrix(2, 2, {0, 0, 0, 1});
  CHECK(values(matmul(p, q)) == std::vector<double>{0, 0, 0, 0});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient of sum matches finite differences") {
  Tensor a = random_tensor({3, 4}, 1);
  Tensor b = random_tensor({4, 2}, 2);
  auto f = [&] { return sum(matmul(a, b)); };
  CHECK(fd::check(f, a) < 1e-6);
  CHECK(fd::check(f, b) < 1e-6);
}

TEST_CASE("elementwise spot values") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  Tensor x = Tensor({}, {-3.5}, true);
  const Tensor r = relu(x);
  CHECK(r.item() == 0.0);
  backward(r);
  CHECK(x.grad()[0] == 0.0);

  Tensor v = Tensor({3}, {1, -2, 3}, true);
  backward(sum(square(v)));
  CHECK(std::vector<double>(v.grad().begin(), v.grad().end()) == std::vector<double>{2, -4, 6});
}

TEST_CASE("sigmoid is stable at extreme logits") {
  const Tensor s = sigmoid(Tensor::vector({-800, 800}));
  CHECK(s[0] == 0.0);
  CHECK(s[1] == 1.0);
  CHECK(stable_sigmoid(-40) > 0.0);
}

TEST_CASE("domain errors") {
  CHECK_THROWS_AS(log(Tensor::vector({1.0, 0.0})), DomainError);
  CHECK_THROWS_AS(log(Tensor::vector({-1.0})), DomainError);
  CHECK_THROWS_AS(sqrt(Tensor::vector({0.0})), DomainError);
}

TEST_CASE("binary ops broadcast scalars only") {
  const Tensor a = Tensor::vector({1, 2, 3});
  CHECK(values(add(a, Tensor::scalar(1))) == std::vector<double>{2, 3, 4});
  CHECK(values(mul(Tensor::scalar(2), a)) == std::vector<double>{2, 4, 6});
  CHECK_THROWS_AS(add(a, Tensor::vector({1, 2})), DimensionError);
  CHECK_THROWS_AS(add(Tensor::zeros({3, 1}), Tensor::zeros({3})), DimensionError);
}

TEST_CASE("reductions") {
  CHECK(sum(Tensor::vector({1, 2, 3})).item() == 6.0);
  CHECK(values(mean(Tensor::matrix(2, 2, {1, 3, 3, 5}), 0)) == std::vector<double>{2, 4});
  CHECK(values(sum(Tensor::matrix(2, 2, {1, 3, 3, 5}), 1)) == std::vector<double>{4, 8});
  CHECK_THROWS_AS(sum(Tensor::zeros({2, 2}), 2), DimensionError);

  Tensor x = Tensor({5}, {1, 2, 3, 4, 5}, true);
  backward(mean(x));
  for (double g : x.grad()) CHECK(g == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("conv1d identity and differencing kernels") {
  const Tensor x = Tensor({1, 4}, {1, 2, 3, 4});
  CHECK(values(conv1d(x, Tensor({1, 1, 1}, {1}), 1)) == std::vector<double>{1, 2, 3, 4});
  const Tensor ones = Tensor({1, 4}, {1, 1, 1, 1});
  CHECK(values(conv1d(ones, Tensor({1, 1, 2}, {1, -1}), 1)) == std::vector<double>{0, 0, 0});
}

TEST_CASE("conv1d output length and errors") {
  const Tensor x = Tensor::zeros({2, 16});
  CHECK(conv1d(x, Tensor::zeros({3, 2, 4}), 2).shape() == Shape{3, 7});
  CHECK(conv1d(Tensor::zeros({5, 2, 16}), Tensor::zeros({3, 2, 4}), 3).shape() == Shape{5, 3, 5});
  CHECK_THROWS_AS(conv1d(x, Tensor::zeros({3, 2, 17}), 1), ConfigError);
  CHECK_THROWS_AS(conv1d(x, Tensor::zeros({3, 2, 4}), 0), ConfigError);
  CHECK_THROWS_AS(conv1d(x, Tensor::zeros({3, 1, 4}), 1), DimensionError);
}

TEST_CASE("conv1d gradients match finite differences") {
  Tensor x = random_tensor({2, 16}, 3);
  Tensor k = random_tensor({3, 2, 4}, 4);
  const Tensor w = random_tensor({3, 7}, 5).detach();
  auto f = [&] { return sum(mul(conv1d(x, k, 2), w)); };
  CHECK(fd::check(f, x) < 1e-6);
  CHECK(fd::check(f, k) < 1e-6);

  Tensor xb = random_tensor({3, 2, 16}, 6);
  Tensor bias = random_tensor({3}, 7);
  const Tensor wb = random_tensor({3, 3, 7}, 8).detach();
  auto fb = [&] { return sum(mul(conv1d(xb, k, bias, 2), wb)); };
  CHECK(fd::check(fb, xb) < 1e-6);
  CHECK(fd::check(fb, k) < 1e-6);
  CHECK(fd::check(fb, bias) < 1e-6);
}

TEST_CASE("batched conv1d equals per-sample conv1d bitwise") {
  const Tensor xb = random_tensor({3, 2, 16}, 9).detach();
  const Tensor k = random_tensor({4, 2, 3}, 10).detach();
  const Tensor bias = random_tensor({4}, 11).detach();
  const Tensor batched = conv1d(xb, k, bias, 2);
  for (std::size_t n = 0; n < 3; ++n) {
    const std::vector<std::size_t> row{n};
    const Tensor single = conv1d(reshape(gather_rows(xb, row), {2, 16}), k, bias, 2);
    for (std::size_t i = 0; i < single.size(); ++i) CHECK(single[i] == batched[n * single.size() + i]);
  }
}

TEST_CASE("backward product rule and accumulation") {
  Tensor a = Tensor({2}, {1, 2}, true);
  Tensor b = Tensor({2}, {3, 4}, true);
  backward(sum(mul(a, b)));
  CHECK(std::vector<double>(a.grad().begin(), a.grad().end()) == std::vector<double>{3, 4});
  CHECK(std::vector<double>(b.grad().begin(), b.grad().end()) == std::vector<double>{1, 2});

  Tensor x = Tensor({3}, {1, 2, 3}, true);
  backward(add(sum(x), sum(x)));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2, 2, 2});
}

TEST_CASE("backward of a non-scalar is a contract error") {
  Tensor x = Tensor({3}, {1, 2, 3}, true);
  CHECK_THROWS_AS(backward(square(x)), ContractError);
}

TEST_CASE("tape is topologically ordered and visits each node once") {
  Tensor x = Tensor({2}, {0.5, -1.0}, true);
  const Tensor y = square(x);
  const Tensor loss = sum(add(y, y));
  const Tape tape = Tape::record(loss);
  const auto ops = tape.op_names();
  REQUIRE(ops.size() == 4);  // x, y, add, sum: y shared but recorded once
  CHECK(ops.front() == "leaf");
  CHECK(ops.back() == "sum");
  tape.run_backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));  // d/dx 2x^2 = 4x
  CHECK(x.grad()[1] == doctest::Approx(-4.0));
}

TEST_CASE("backward is linear in the loss") {
  Tensor x = random_tensor({4}, 12);
  auto f = [&] { return sum(sigmoid(x)); };
  auto g = [&] { return sum(mul(x, exp(x))); };
  const auto gf = fd::analytic_gradient(f, x);
  const auto gg = fd::analytic_gradient(g, x);
  const auto combo = fd::analytic_gradient([&] { return add(scale(f(), 2.5), scale(g(), -0.75)); }, x);
  for (std::size_t i = 0; i < 4; ++i) CHECK(combo[i] == doctest::Approx(2.5 * gf[i] - 0.75 * gg[i]).epsilon(1e-14));
}

TEST_CASE("forward and backward are deterministic") {
  Tensor x = random_tensor({2, 2, 16}, 13);
  Tensor k = random_tensor({3, 2, 4}, 14);
  auto f = [&] { return mean(relu(conv1d(x, k, 2))); };
  const auto first = fd::analytic_gradient(f, k);
  const auto second = fd::analytic_gradient(f, k);
  CHECK(first == second);
}

TEST_CASE("non-finite values are rejected") {
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(Tensor({1}, {std::nan("")}), ContractError);
  CHECK_THROWS_AS(exp(Tensor::vector({1000.0})), ContractError);
  CHECK_THROWS_AS(Tensor({1}, {inf}), ContractError);
}

TEST_CASE("shape contract") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(reshape(Tensor::zeros({2, 3}), {4, 2}), DimensionError);
  CHECK(Tensor::scalar(3).shape().empty());
  CHECK_THROWS_AS(Tensor::vector({1, 2}).item(), ContractError);
}

TEST_CASE("no-grad guard records nothing and only leaves are mutable") {
  Tensor x = Tensor({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = square(x);
  }
  CHECK_FALSE(y.requires_grad());
  CHECK_FALSE(y.is_leaf());
  CHECK_THROWS_AS(y.mutable_data(), ContractError);
  CHECK(square(x).requires_grad());
  x.mutable_data()[0] = 5;
  CHECK(x[0] == 5);
}

TEST_CASE("shape primitives") {
  const Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(values(transpose(m)) == std::vector<double>{1, 4, 2, 5, 3, 6});
  CHECK(values(concat_cols(m, Tensor::matrix(2, 1, {7, 8}))) == std::vector<double>{1, 2, 3, 7, 4, 5, 6, 8});
  const std::vector<std::size_t> rows{1, 1, 0};
  CHECK(values(gather_rows(m, rows)) == std::vector<double>{4, 5, 6, 4, 5, 6, 1, 2, 3});
  CHECK(values(add_rowwise(m, Tensor::vector({1, 0, -1}))) == std::vector<double>{2, 2, 2, 5, 5, 5});
  CHECK(values(mul_rowwise(m, Tensor::vector({2, 0, 1}))) == std::vector<double>{2, 0, 3, 8, 0, 6});
  const std::vector<std::size_t> bad{2};
  CHECK_THROWS_AS(gather_rows(m, bad), DimensionError);
}

TEST_CASE("gather_rows accumulates gradients of repeated rows") {
  Tensor a = Tensor({3, 1}, {1, 2, 3}, true);
  const std::vector<std::size_t> rows{2, 0, 2};
  backward(sum(gather_rows(a, rows)));
  CHECK(std::vector<double>(a.grad().begin(), a.grad().end()) == std::vector<double>{1, 0, 2});
}

TEST_CASE("fused BCE matches the composed form and its analytic gradient") {
  Tensor t = random_tensor({4, 3}, 15);
  Rng rng(16);
  std::vector<double> yv(12);
  for (auto& y : yv) y = rng.uniform() < 0.5 ? 1.0 : 0.0;
  const Tensor y = Tensor({4, 3}, yv);
  const double fused = bce_with_logits_mean(t, y).item();
  double manual = 0;
  for (std::size_t i = 0; i < 12; ++i) {
    const double s = 1 / (1 + std::exp(-t[i]));
    manual -= yv[i] * std::log(s) + (1 - yv[i]) * std::log(1 - s);
  }
  CHECK(fused == doctest::Approx(manual / 12).epsilon(1e-12));
  const auto g = fd::analytic_gradient([&] { return bce_with_logits_mean(t, y); }, t);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(g[i] == doctest::Approx((stable_sigmoid(t[i]) - yv[i]) / 12).epsilon(1e-12));
  }
}
