#include "doctest.h"

#include "cod/schedule.hpp"

#include <stdexcept>

using namespace cod;

TEST_CASE("single-step schedule is forced by the definitions") {
  auto s = linear_schedule(1, 0.5, 0.5);
  CHECK(s.alpha_at(1) == doctest::Approx(0.5));
  CHECK(s.alpha_bar_at(0) == 1.0);
  CHECK(s.alpha_bar_at(1) == doctest::Approx(0.5));
  CHECK(s.posterior_var_at(1) == 0.0);
}

TEST_CASE("two-step hand evaluation of the product and ratio tables") {
  auto s = linear_schedule(2, 0.1, 0.2);
  CHECK(s.beta_at(1) == doctest::Approx(0.1));
  CHECK(s.beta_at(2) == doctest::Approx(0.2));
  CHECK(s.alpha_bar_at(0) == 1.0);
  CHECK(s.alpha_bar_at(1) == doctest::Approx(0.9));
  CHECK(s.alpha_bar_at(2) == doctest::Approx(0.72));
  // (1 - 0.9) / (1 - 0.72) * 0.2
  CHECK(s.posterior_var_at(2) == doctest::Approx(0.0714285714285714).epsilon(1e-12));
}

TEST_CASE("paper-sized schedule satisfies every table invariant") {
  auto s = linear_schedule(200);  // K = 200 default with beta in [1e-4, 0.02]
  CHECK_NOTHROW(s.validate());
  CHECK(s.K == 200);
  for (int k = 1; k <= s.K; ++k) {
    CHECK(s.alpha_at(k) + s.beta_at(k) == 1.0);
    CHECK(s.alpha_bar_at(k) < s.alpha_bar_at(k - 1));
    CHECK(s.posterior_var_at(k) >= 0.0);
    CHECK(s.posterior_var_at(k) < s.beta_at(k));
  }
  CHECK(s.alpha_bar_at(200) > 0.0);
  CHECK(s.posterior_var_at(1) == 0.0);
}

TEST_CASE("schedule construction rejects invalid ranges") {
  CHECK_THROWS_AS(linear_schedule(0, 0.1, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(linear_schedule(10, 0.0, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(linear_schedule(10, 0.3, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(linear_schedule(10, 0.3, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(linear_schedule(5).check_step(0), std::invalid_argument);
  CHECK_THROWS_AS(linear_schedule(5).check_step(6), std::invalid_argument);
}

TEST_CASE("ddim subsequence") {
  SUBCASE("paper stride: 200 by 10 gives 21 indices, 20 transitions") {
    auto steps = ddim_subsequence(200, 10);
    REQUIRE(steps.size() == 21);
    CHECK(steps.front() == 200);
    CHECK(steps[1] == 190);
    CHECK(steps[19] == 10);
    CHECK(steps.back() == 0);
  }
  SUBCASE("stride = K is a single jump") {
    auto steps = ddim_subsequence(37, 37);
    CHECK(steps == std::vector<int>{37, 0});
  }
  SUBCASE("K=7 stride=3 enumerates 7,4,1,0") {
    CHECK(ddim_subsequence(7, 3) == std::vector<int>{7, 4, 1, 0});
  }
  SUBCASE("always starts at K, strictly decreasing, ends at 0") {
    for (int K : {1, 2, 5, 48, 200}) {
      for (int stride = 1; stride <= K; ++stride) {
        auto steps = ddim_subsequence(K, stride);
        CHECK(steps.front() == K);
        CHECK(steps.back() == 0);
        for (std::size_t i = 0; i + 1 < steps.size(); ++i) CHECK(steps[i] > steps[i + 1]);
        CHECK(static_cast<int>(steps.size()) == (K + stride - 1) / stride + 1);
      }
    }
  }
  SUBCASE("stride outside [1,K] is rejected") {
    CHECK_THROWS_AS(ddim_subsequence(10, 0), std::invalid_argument);
    CHECK_THROWS_AS(ddim_subsequence(10, 11), std::invalid_argument);
  }
}
