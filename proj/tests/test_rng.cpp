// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "doctest.h"
#include "lcl/rng.hpp"
#include "stats.hpp"

using namespace lcl;

TEST_CASE("philox4x32-10 known answers") {
  using A4 = std::array<std::uint32_t, 4>;
  CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) == A4{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}) ==
        A4{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
        A4{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("streams replay and split independently") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng parent(42);
  Rng c1 = parent.split(1), c1b = parent.split(1), c2 = parent.split(2);
  CHECK(parent.counter() == 0);
  CHECK(c1.next_u64() == c1b.next_u64());
  Rng c1c = parent.split(1);
  CHECK(c1c.next_u64() != c2.next_u64());
  CHECK(parent.split("pos").next_u64() != parent.split("neg").next_u64());
  CHECK(Rng(1).next_u64() != Rng(2).next_u64());
}

TEST_CASE("uniform and normal moments") {
  Rng r(3);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    su += u;
    double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(std::abs(sn / n) < 0.01);
  CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("below, between and categorical follow their laws") {
  Rng r(9);
  std::vector<std::size_t> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[r.below(7)];
  CHECK(test::chi_square_p(counts, std::vector<double>(7, 1.0 / 7)) > 0.01);

  for (int i = 0; i < 1000; ++i) {
    auto v = r.between(-3, 3);
    REQUIRE(v >= -3);
    REQUIRE(v <= 3);
  }

  std::vector<double> w = {1, 2, 3, 4};
  std::vector<std::size_t> cc(4, 0);
  for (int i = 0; i < 100000; ++i) ++cc[r.categorical(w)];
  CHECK(test::chi_square_p(cc, {0.1, 0.2, 0.3, 0.4}) > 0.01);
}

TEST_CASE("shuffle is a permutation") {
  Rng r(5);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  r.shuffle(std::span<int>(v));
  std::vector<int> s = v;
  std::sort(s.begin(), s.end());
  for (int i = 0; i < 50; ++i) CHECK(s[i] == i);
  CHECK(v != s);
}
