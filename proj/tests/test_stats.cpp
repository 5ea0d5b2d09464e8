#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "hpm/stats.hpp"

using namespace hpm::stats;

TEST_SUITE("stats") {
  TEST_CASE("average ranks share the mean rank across ties") {
    std::vector<double> v = {10, 20, 20, 30};
    auto r = average_ranks(v);
    CHECK(r == std::vector<double>{1.0, 2.5, 2.5, 4.0});
    std::vector<double> all_same = {7, 7, 7};
    auto r2 = average_ranks(all_same);
    CHECK(r2 == std::vector<double>{2.0, 2.0, 2.0});
  }

  TEST_CASE("pearson is exact on affine relations") {
    std::vector<double> a = {1, 2, 3, 4, 5};
    std::vector<double> up(5), down(5);
    for (int i = 0; i < 5; ++i) {
      up[i] = 3 * a[i] + 2;
      down[i] = -0.5 * a[i] + 1;
    }
    CHECK(pearson(a, up) == doctest::Approx(1.0));
    CHECK(pearson(a, down) == doctest::Approx(-1.0));
    std::vector<double> flat = {2, 2, 2, 2, 2};
    CHECK(pearson(a, flat) == 0.0);
  }

  TEST_CASE("spearman matches hand-computed values") {
    std::vector<double> a = {1, 2, 3, 4, 5};
    std::vector<double> b = {2, 1, 4, 3, 5};
    CHECK(spearman(a, b) == doctest::Approx(0.8));  // 1 - 6*4/120
    // Monotone nonlinear transform keeps rho at 1.
    std::vector<double> c(5);
    for (int i = 0; i < 5; ++i) c[i] = std::exp(a[i]);
    CHECK(spearman(a, c) == doctest::Approx(1.0));
    std::vector<double> rev = {5, 4, 3, 2, 1};
    CHECK(spearman(a, rev) == doctest::Approx(-1.0));
    // Tie handling: ranks of {1,1,2} are {1.5, 1.5, 3}.
    std::vector<double> ta = {1, 1, 2};
    std::vector<double> tb = {1, 2, 3};
    CHECK(spearman(ta, tb) == doctest::Approx(std::sqrt(3.0) / 2.0));
  }

  TEST_CASE("kendall tau-b matches hand-computed values") {
    std::vector<double> a = {1, 2, 3, 4, 5};
    std::vector<double> b = {2, 1, 4, 3, 5};
    CHECK(kendall(a, b) == doctest::Approx(0.6));  // (8-2)/10
    CHECK(kendall(a, a) == doctest::Approx(1.0));
    std::vector<double> rev = {5, 4, 3, 2, 1};
    CHECK(kendall(a, rev) == doctest::Approx(-1.0));
    // Tie correction: one tied pair on the left side.
    std::vector<double> ta = {1, 1, 2};
    std::vector<double> tb = {1, 2, 3};
    CHECK(kendall(ta, tb) == doctest::Approx(2.0 / std::sqrt(6.0)));
    std::vector<double> flat = {3, 3, 3};
    CHECK(kendall(flat, tb) == 0.0);
  }

  TEST_CASE("correlation inputs are validated") {
    std::vector<double> a = {1, 2, 3};
    std::vector<double> b = {1, 2};
    CHECK_THROWS_AS(spearman(a, b), std::invalid_argument);
    CHECK_THROWS_AS(kendall(a, b), std::invalid_argument);
    std::vector<double> one = {1};
    CHECK_THROWS_AS(spearman(one, one), std::invalid_argument);
  }

  TEST_CASE("normal quantile hits standard values") {
    CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-8));
    CHECK(normal_quantile(0.975) == doctest::Approx(1.959964).epsilon(1e-5));
    CHECK(normal_quantile(0.999) == doctest::Approx(3.090232).epsilon(1e-5));
    CHECK(normal_quantile(0.025) == doctest::Approx(-1.959964).epsilon(1e-5));
    CHECK_THROWS_AS(normal_quantile(0.0), std::invalid_argument);
  }

  TEST_CASE("chi-square critical values match tables at moderate dof") {
    CHECK(chi2_critical(10, 0.05) == doctest::Approx(18.307).epsilon(0.005));
    CHECK(chi2_critical(63, 0.001) == doctest::Approx(103.44).epsilon(0.005));
    CHECK(chi2_critical(100, 0.01) == doctest::Approx(135.807).epsilon(0.005));
    CHECK_THROWS_AS(chi2_critical(0, 0.05), std::invalid_argument);
    CHECK_THROWS_AS(chi2_critical(5, 1.5), std::invalid_argument);
  }

  TEST_CASE("crc32 matches the standard check value and chains") {
    const char* s = "123456789";
    CHECK(crc32(s, 9) == 0xCBF43926u);
    CHECK(crc32(s, 0) == 0u);
    // Chained CRC over split input equals CRC over the whole.
    const std::uint32_t part = crc32(s, 4);
    CHECK(crc32(s + 4, 5, part) == 0xCBF43926u);
    const char* t = "123456788";
    CHECK(crc32(t, 9) != crc32(s, 9));
  }
}
