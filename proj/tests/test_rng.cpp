#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "tpi/parallel.hpp"
#include "tpi/rng.hpp"

using tpi::CounterRng;

TEST_CASE("philox known answer for zero key and counter") {
  // Random123 kat_vectors: philox4x32 10 rounds, all-zero input gives
  // 6627e8d5 e169c58d bc57ac4c 9b00dbd8.
  CounterRng rng(0, 0);
  CHECK(rng() == 0xe169c58d6627e8d5ULL);
  CHECK(rng() == 0x9b00dbd8bc57ac4cULL);
}

TEST_CASE("same seed and stream repeat, different streams diverge") {
  CounterRng a(42, 7), b(42, 7), c(42, 8), e(43, 7);
  int same_c = 0, same_e = 0;
  for (int i = 0; i < 1000; ++i) {
    auto x = a();
    CHECK(x == b());
    same_c += x == c();
    same_e += x == e();
  }
  CHECK(same_c == 0);
  CHECK(same_e == 0);
}

TEST_CASE("uniform and normal moments") {
  CounterRng rng(5, 1);
  const int n = 200000;
  double su = 0, su2 = 0, sn = 0, sn2 = 0, sn4 = 0;
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    su += u;
    su2 += u * u;
    double z = rng.normal();
    sn += z;
    sn2 += z * z;
    sn4 += z * z * z * z;
  }
  CHECK(std::abs(su / n - 0.5) < 4 * std::sqrt(1.0 / 12 / n));
  CHECK(std::abs(su2 / n - 1.0 / 3) < 0.005);
  CHECK(std::abs(sn / n) < 4 / std::sqrt(double(n)));
  CHECK(std::abs(sn2 / n - 1) < 4 * std::sqrt(2.0 / n));
  CHECK(std::abs(sn4 / n - 3) < 4 * std::sqrt(96.0 / n));
}

TEST_CASE("below covers its range uniformly") {
  CounterRng rng(9);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) {
    auto v = rng.below(7);
    REQUIRE(v < 7);
    ++counts[v];
  }
  for (int c : counts) CHECK(std::abs(c - n / 7) < 4 * std::sqrt(n / 7.0));
  CHECK(rng.below(1) == 0);
}

TEST_CASE("derive_seed separates tags") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 20; ++s)
    for (std::uint64_t t = 0; t < 20; ++t) seen.insert(tpi::derive_seed(s, t));
  CHECK(seen.size() == 400);
  CHECK(tpi::derive_seed(3, 4) == tpi::derive_seed(3, 4));
}

TEST_CASE("parallel_for visits each index once and rethrows") {
  std::vector<int> hits(1000, 0);
  tpi::parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(tpi::parallel_for(10, 3,
                                    [](std::size_t i) {
                                      if (i == 5) throw std::runtime_error("boom");
                                    }),
                  std::runtime_error);
}
