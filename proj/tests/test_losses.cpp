#include <cmath>
#include <vector>

#include "cardiofuse/errors.hpp"
#include "cardiofuse/log.hpp"
#include "cardiofuse/losses.hpp"
#include "cardiofuse/rng.hpp"
#include "doctest.h"
#include "fd_oracle.hpp"

using namespace cardiofuse;

namespace {

Tensor random_matrix(std::size_t n, std::size_t e, std::uint64_t seed, bool grad = false) {
  Rng rng(seed);
  std::vector<double> v(n * e);
  for (auto& x : v) x = rng.uniform(-2, 2);
  return Tensor({n, e}, std::move(v), grad);
}

/// Straight-line Barlow Twins: population z-scores, C = Zx^T Zm / N, then the two sums.
double reference_barlow_twins(const Tensor& zx, const Tensor& zm, double lambda) {
  const std::size_t n = zx.dim(0), e = zx.dim(1);
  auto standardize = [&](const Tensor& z) {
    std::vector<double> out(n * e);
    for (std::size_t j = 0; j < e; ++j) {
      double mu = 0;
      for (std::size_t b = 0; b < n; ++b) mu += z[b * e + j];
      mu /= double(n);
      double var = 0;
      for (std::size_t b = 0; b < n; ++b) var += (z[b * e + j] - mu) * (z[b * e + j] - mu);
      var /= double(n);
      const double sd = std::sqrt(var + 1e-12);
      for (std::size_t b = 0; b < n; ++b) out[b * e + j] = (z[b * e + j] - mu) / sd;
    }
    return out;
  };
  const auto a = standardize(zx), c = standardize(zm);
  double loss = 0;
  for (std::size_t i = 0; i < e; ++i) {
    for (std::size_t j = 0; j < e; ++j) {
      double cij = 0;
      for (std::size_t b = 0; b < n; ++b) cij += a[b * e + i] * c[b * e + j];
      cij /= double(n);
      loss += i == j ? (1 - cij) * (1 - cij) : lambda * cij * cij;
    }
  }
  return loss;
}

}  // namespace

TEST_CASE("batch_normalize hand cases") {
  const NormalizedBatch a = batch_normalize(Tensor({4, 1}, {2, 0, -2, 0}));
  CHECK(a.values[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(a.values[1] == 0.0);
  CHECK(a.values[2] == doctest::Approx(-std::sqrt(2.0)).epsilon(1e-12));
  CHECK(a.degenerate_columns.empty());

  const Tensor normalized = Tensor({4, 1}, {1, -1, 1, -1});
  const NormalizedBatch b = batch_normalize(normalized);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(b.values[i] - normalized[i]) < 1e-9);

  set_log_level(LogLevel::kError);
  const NormalizedBatch c = batch_normalize(Tensor({4, 2}, {5, 1, 5, 2, 5, 3, 5, 4}));
  set_log_level(LogLevel::kInfo);
  CHECK(c.degenerate_columns == std::vector<std::size_t>{0});
  for (std::size_t b = 0; b < 4; ++b) CHECK(c.values[b * 2] == 0.0);
}

TEST_CASE("batch statistics need two rows") {
  CHECK_THROWS_AS(batch_normalize(Tensor({1, 3}, {1, 2, 3})), ContractError);
  CHECK_THROWS_AS(barlow_twins(Tensor({1, 2}, {1, 2}), Tensor({1, 2}, {1, 2})), ContractError);
}

TEST_CASE("cross_correlation hand cases") {
  const Tensor z = Tensor({4, 2}, {1, 1, 1, -1, -1, 1, -1, -1});
  const Tensor c = cross_correlation(z, z);
  CHECK(c.shape() == Shape{2, 2});
  CHECK(c[0] == 1.0);
  CHECK(c[1] == 0.0);
  CHECK(c[2] == 0.0);
  CHECK(c[3] == 1.0);
  const Tensor x = Tensor({2, 1}, {1, -1});
  CHECK(cross_correlation(x, neg(x)).item() == -1.0);
  CHECK_THROWS_AS(cross_correlation(z, Tensor::zeros({3, 2})), DimensionError);
  CHECK_THROWS_AS(cross_correlation(z, Tensor::zeros({4, 3})), DimensionError);
}

TEST_CASE("cross_correlation equals the brute-force double loop") {
  const Tensor a = random_matrix(8, 3, 1), b = random_matrix(8, 3, 2);
  const Tensor c = cross_correlation(a, b);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0;
      for (std::size_t n = 0; n < 8; ++n) acc += a[n * 3 + i] * b[n * 3 + j];
      CHECK(std::abs(c[i * 3 + j] - acc / 8) < 1e-12);
    }
  }
}

TEST_CASE("Barlow Twins identities") {
  const Tensor z = Tensor({4, 2}, {1, 1, 1, -1, -1, 1, -1, -1});
  CHECK(std::abs(barlow_twins(z, z, 0.005).loss.item()) < 1e-10);

  const Tensor x = Tensor({4, 1}, {5, -5, 5, -5});
  for (double lambda : {0.0, 0.005, 3.0}) {
    const BarlowTwinsResult r = barlow_twins(x, neg(x), lambda);
    CHECK(std::abs(r.cross_corr.item() + 1.0) < 1e-12);
    CHECK(std::abs(r.loss.item() - 4.0) < 1e-12);
  }
}

TEST_CASE("Barlow Twins matches a straight-line reimplementation") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor a = random_matrix(16, 2, 10 + seed), b = random_matrix(16, 2, 20 + seed);
    CHECK(std::abs(barlow_twins(a, b, 0.005).loss.item() - reference_barlow_twins(a, b, 0.005)) < 1e-10);
  }
  const Tensor a = random_matrix(9, 5, 30), b = random_matrix(9, 5, 31);
  CHECK(std::abs(barlow_twins(a, b, 0.7).loss.item() - reference_barlow_twins(a, b, 0.7)) < 1e-10);
}

TEST_CASE("Barlow Twins gradient matches finite differences through the normalization") {
  Tensor a = random_matrix(6, 2, 40, true), b = random_matrix(6, 2, 41, true);
  auto f = [&] { return barlow_twins(a, b, 0.005).loss; };
  CHECK(fd::check(f, a) < 1e-4);
  CHECK(fd::check(f, b) < 1e-4);
}

TEST_CASE("Barlow Twins symmetry and invariances") {
  const Tensor a = random_matrix(12, 4, 50), b = random_matrix(12, 4, 51);
  const BarlowTwinsResult ab = barlow_twins(a, b, 0.005);
  CHECK(std::abs(ab.loss.item() - barlow_twins(b, a, 0.005).loss.item()) < 1e-10);

  std::vector<double> shifted(a.data().begin(), a.data().end());
  for (std::size_t n = 0; n < 12; ++n) shifted[n * 4 + 2] = 3.5 * shifted[n * 4 + 2] - 7.0;
  const BarlowTwinsResult affine = barlow_twins(Tensor({12, 4}, shifted), b, 0.005);
  CHECK(std::abs(affine.loss.item() - ab.loss.item()) < 1e-9);
  for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(affine.cross_corr[i] - ab.cross_corr[i]) < 1e-9);

  CHECK(ab.loss.item() >= 0.0);
  for (double c : ab.cross_corr.data()) CHECK(std::abs(c) <= 1.0 + 1e-9);
}

TEST_CASE("rank-one collapse is penalized by the redundancy term") {
  Rng rng(60);
  std::vector<double> col(10), zx(30);
  for (auto& v : col) v = rng.normal();
  for (std::size_t n = 0; n < 10; ++n)
    for (std::size_t j = 0; j < 3; ++j) zx[n * 3 + j] = col[n];
  const BarlowTwinsResult r = barlow_twins(Tensor({10, 3}, zx), Tensor({10, 3}, zx), 0.005);
  CHECK(std::abs(std::abs(r.cross_corr[1]) - 1.0) < 1e-9);
  CHECK(r.loss.item() > 0.005 * 6 * 0.99);
}

TEST_CASE("degenerate embeddings are flagged, not fatal") {
  set_log_level(LogLevel::kError);
  const Tensor constant = Tensor::full({4, 2}, 1.0);
  const BarlowTwinsResult r = barlow_twins(constant, random_matrix(4, 2, 70), 0.005);
  set_log_level(LogLevel::kInfo);
  CHECK(r.degenerate());
  CHECK(r.degenerate_signal.size() == 2);
  CHECK(r.degenerate_tabular.empty());
  CHECK(std::isfinite(r.loss.item()));
}

TEST_CASE("BCE spot values") {
  CHECK(std::abs(bce_with_logits(Tensor::vector({1}), Tensor::vector({0})).item() - std::log(2.0)) < 1e-12);
  CHECK(bce_with_logits(Tensor::vector({1, 0}), Tensor::vector({40, -40})).item() < 1e-15);
  CHECK(std::isfinite(bce_with_logits(Tensor::vector({0, 1}), Tensor::vector({800, -800})).item()));
  CHECK_THROWS_AS(bce_with_logits(Tensor::vector({0.5}), Tensor::vector({0})), ContractError);
  CHECK_THROWS_AS(bce_with_logits(Tensor::vector({1, 0}), Tensor::vector({0})), DimensionError);
}

TEST_CASE("BCE gradient is (sigmoid(t) - y) / K") {
  Tensor t = Tensor({5}, {-1.5, 0.2, 3.0, -0.1, 0.7}, true);
  const Tensor y = Tensor::vector({1, 0, 1, 1, 0});
  auto f = [&] { return bce_with_logits(y, t); };
  const auto g = fd::analytic_gradient(f, t);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(std::abs(g[i] - (1 / (1 + std::exp(-t[i])) - y[i]) / 5) < 1e-15);
  }
  CHECK(fd::check(f, t) < 1e-6);
}

TEST_CASE("BCE is convex in the logits") {
  Rng rng(80);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(4), b(4), mid(4), y(4);
    for (std::size_t i = 0; i < 4; ++i) {
      a[i] = rng.uniform(-6, 6);
      b[i] = rng.uniform(-6, 6);
      mid[i] = 0.5 * (a[i] + b[i]);
      y[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
    }
    const Tensor ty = Tensor::vector(y);
    const double fa = bce_with_logits(ty, Tensor::vector(a)).item();
    const double fb = bce_with_logits(ty, Tensor::vector(b)).item();
    const double fm = bce_with_logits(ty, Tensor::vector(mid)).item();
    CHECK(fm <= 0.5 * (fa + fb) + 1e-15);
  }
}
