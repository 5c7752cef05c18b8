#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "cardiofuse/rng.hpp"
#include "doctest.h"

using cardiofuse::derive_key;
using cardiofuse::Rng;

TEST_CASE("matches the published SplitMix64 sequence for seed 1234567") {
  Rng rng(1234567);
  CHECK(rng.next() == 6457827717110365317ULL);
  CHECK(rng.next() == 3203168211198807973ULL);
  CHECK(rng.next() == 9817491932198370423ULL);
  CHECK(rng.next() == 4593380528125082431ULL);
  CHECK(rng.next() == 16408922859458223821ULL);
}

TEST_CASE("streams are reproducible and keyed") {
  Rng a(derive_key(7, 1, 2)), b(derive_key(7, 1, 2));
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());

  std::set<std::uint64_t> keys;
  for (std::uint64_t s = 0; s < 4; ++s)
    for (std::uint64_t x = 0; x < 4; ++x)
      for (std::uint64_t y = 0; y < 4; ++y) keys.insert(derive_key(s, x, y));
  CHECK(keys.size() == 64);
  CHECK(derive_key(1, 2, 3) != derive_key(1, 3, 2));
}

TEST_CASE("uniform moments") {
  Rng rng(11);
  const int n = 100000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    sq += u * u;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean - 0.5) < 3 * std::sqrt(1.0 / 12 / n));
  CHECK(std::abs(var - 1.0 / 12) < 0.002);
}

TEST_CASE("normal draws two words each and has unit moments") {
  Rng a(5), b(5);
  a.normal();
  b.next();
  b.next();
  CHECK(a.next() == b.next());

  Rng rng(13);
  const int n = 100000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    REQUIRE(std::isfinite(z));
    sum += z;
    sq += z * z;
  }
  const double mean = sum / n;
  CHECK(std::abs(mean) < 3 / std::sqrt(double(n)));
  // Var of the sample variance of N(0,1) is about 2/n.
  CHECK(std::abs(sq / n - mean * mean - 1.0) < 3 * std::sqrt(2.0 / n));
}

TEST_CASE("uniform_int covers the closed range evenly") {
  Rng rng(17);
  std::vector<int> counts(11, 0);
  const int n = 110000;
  for (int i = 0; i < n; ++i) {
    const auto v = rng.uniform_int(2, 12);
    REQUIRE(v >= 2);
    REQUIRE(v <= 12);
    ++counts[static_cast<std::size_t>(v - 2)];
  }
  double chi2 = 0;
  for (int c : counts) chi2 += (c - 10000.0) * (c - 10000.0) / 10000.0;
  CHECK(chi2 < 29.59);  // chi-square(10) 0.999 quantile
  CHECK(rng.uniform_int(4, 4) == 4);
}

TEST_CASE("shuffle is a deterministic permutation") {
  std::vector<std::size_t> a(50), b(50);
  std::iota(a.begin(), a.end(), std::size_t{0});
  b = a;
  Rng r1(3), r2(3);
  r1.shuffle(a);
  r2.shuffle(b);
  CHECK(a == b);
  std::vector<std::size_t> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
  std::vector<std::size_t> identity(50);
  std::iota(identity.begin(), identity.end(), std::size_t{0});
  CHECK(a != identity);
}

TEST_CASE("every position is equally likely under shuffle") {
  // Element 0 lands in each of 4 slots with probability 1/4.
  Rng rng(19);
  std::vector<int> slot(4, 0);
  for (int t = 0; t < 40000; ++t) {
    std::vector<std::size_t> v{0, 1, 2, 3};
    rng.shuffle(v);
    ++slot[static_cast<std::size_t>(std::find(v.begin(), v.end(), 0) - v.begin())];
  }
  for (int c : slot) CHECK(std::abs(c - 10000) < 300);
}
