#include <set>

#include "doctest.h"
#include "fedsgc/rng.hpp"

using fedsgc::Rng;

TEST_CASE("named streams are deterministic and independent") {
  Rng a = Rng::stream(42, "init");
  Rng b = Rng::stream(42, "init");
  Rng c = Rng::stream(42, "sampling");
  for (int i = 0; i < 16; ++i) CHECK(a.next_u64() == b.next_u64());
  bool any_diff = false;
  Rng a2 = Rng::stream(42, "init");
  for (int i = 0; i < 16; ++i) any_diff |= (a2.next_u64() != c.next_u64());
  CHECK(any_diff);
}

TEST_CASE("indexed streams differ") {
  Rng a = Rng::stream(7, "client-batches", 0);
  Rng b = Rng::stream(7, "client-batches", 1);
  bool any_diff = false;
  for (int i = 0; i < 16; ++i) any_diff |= (a.next_u64() != b.next_u64());
  CHECK(any_diff);
}

TEST_CASE("uniform in range, normal has sane moments") {
  Rng r(123);
  double sum = 0.0, sum2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double g = r.normal();
    sum += g;
    sum2 += g * g;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sum2 / n - 1.0) < 0.05);
}

TEST_CASE("gamma mean matches shape") {
  Rng r(5);
  for (double shape : {0.3, 1.0, 4.5}) {
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) sum += r.gamma(shape);
    CHECK(sum / n == doctest::Approx(shape).epsilon(0.08));
  }
  CHECK_THROWS_AS(r.gamma(0.0), std::invalid_argument);
}

TEST_CASE("sample_without_replacement basics") {
  Rng r(9);
  auto all = r.sample_without_replacement(5, 5);
  CHECK(all == std::vector<int>{0, 1, 2, 3, 4});
  auto some = r.sample_without_replacement(100, 10);
  CHECK(some.size() == 10);
  CHECK(std::set<int>(some.begin(), some.end()).size() == 10);
  CHECK(std::is_sorted(some.begin(), some.end()));
  CHECK_THROWS_AS(r.sample_without_replacement(3, 4), std::invalid_argument);
}
