#include "doctest.h"

#include "cod/dataset.hpp"
#include "cod/pointmass.hpp"

#include <set>

using namespace cod;

namespace {

TrajectoryDataset synthetic_dataset(int episodes, int L, std::uint64_t seed) {
  TrajectoryDataset d;
  d.task_id = 3;
  d.condition = Eigen::Vector2f(0.6f, -0.8f);
  d.d_s = 4;
  d.d_a = 2;
  d.L = L;
  Rng rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  for (int e = 0; e < episodes; ++e) {
    Episode ep;
    ep.states.resize(L, 4);
    ep.actions.resize(L, 2);
    ep.rewards.resize(L);
    for (int t = 0; t < L; ++t) {
      for (int j = 0; j < 4; ++j) ep.states(t, j) = g(rng);
      for (int j = 0; j < 2; ++j) ep.actions(t, j) = g(rng);
      ep.rewards(t) = g(rng);
    }
    d.episodes.push_back(std::move(ep));
  }
  return d;
}

}  // namespace

TEST_CASE("window extraction") {
  SUBCASE("L=200, T_e=48 gives windows at 0,48,96,144,152") {
    auto d = synthetic_dataset(1, 200, 1);
    auto ws = split_windows(d, 48);
    REQUIRE(ws.size() == 5);
    // check offsets by matching the first state column values
    const std::vector<int> offsets = {0, 48, 96, 144, 152};
    for (std::size_t i = 0; i < ws.size(); ++i) {
      for (int t = 0; t < 48; ++t)
        CHECK(ws[i].m(t, 0) == d.episodes[0].states(offsets[i] + t, 0));
      CHECK(ws[i].m.cols() == 6);
    }
  }
  SUBCASE("L == T_e gives exactly one window") {
    auto d = synthetic_dataset(2, 48, 2);
    CHECK(split_windows(d, 48).size() == 2);  // one per episode
  }
  SUBCASE("every time index of every episode is covered by some window") {
    auto d = synthetic_dataset(2, 50, 3);
    auto ws = split_windows(d, 16);
    // windows per episode at offsets 0,16,32 + right-aligned 34
    REQUIRE(ws.size() == 8);
    std::set<int> covered;
    const std::vector<int> offsets = {0, 16, 32, 34};
    for (int off : offsets)
      for (int t = 0; t < 16; ++t) covered.insert(off + t);
    CHECK(covered.size() == 50);
  }
  SUBCASE("episodes shorter than the window are rejected") {
    auto d = synthetic_dataset(1, 10, 4);
    CHECK_THROWS_AS(split_windows(d, 16), std::invalid_argument);
  }
}

TEST_CASE("gaussian normalizer") {
  auto d = synthetic_dataset(5, 64, 7);
  auto ws = split_windows(d, 16);
  auto norm = GaussianNormalizer::fit(ws);

  SUBCASE("normalize then denormalize is the identity within 1e-6") {
    const auto& w = ws[3].m;
    auto round = norm.denormalize(norm.normalize(w));
    CHECK((round - w).cwiseAbs().maxCoeff() < 1e-6f);
  }
  SUBCASE("normalized corpus has zero mean and unit deviation per column") {
    const int c = 6;
    Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(c), sum_sq = Eigen::ArrayXd::Zero(c);
    std::int64_t n = 0;
    for (const auto& w : ws) {
      Eigen::MatrixXf z = norm.normalize(w.m);
      for (int j = 0; j < c; ++j) {
        sum(j) += z.col(j).cast<double>().sum();
        sum_sq(j) += z.col(j).array().cast<double>().square().sum();
      }
      n += z.rows();
    }
    for (int j = 0; j < c; ++j) {
      const double mean = sum(j) / n;
      const double var = sum_sq(j) / n - mean * mean;
      CHECK(std::abs(mean) < 1e-6);
      CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-4);
    }
  }
  SUBCASE("constant columns are floored and map to zero") {
    auto flat = synthetic_dataset(1, 32, 9);
    for (auto& ep : flat.episodes) ep.states.col(1).setConstant(2.5f);
    auto fws = split_windows(flat, 16);
    auto fnorm = GaussianNormalizer::fit(fws);
    CHECK(fnorm.std(1) == 1e-6f);
    auto z = fnorm.normalize(fws[0].m);
    CHECK(z.col(1).cwiseAbs().maxCoeff() < 1e-3f);
  }
}

TEST_CASE("rehearsal buffer construction") {
  auto d = synthetic_dataset(10, 160, 11);
  auto ws = split_windows(d, 16);  // 100 windows
  REQUIRE(ws.size() == 100);

  SUBCASE("xi=1 keeps everything") {
    auto buf = build_rehearsal(ws, 1.0, 5, d.task_id, d.condition);
    CHECK(buf.windows.size() == 100);
  }
  SUBCASE("xi=0.1 keeps 10 distinct windows, reproducibly") {
    auto a = build_rehearsal(ws, 0.1, 5, d.task_id, d.condition);
    auto b = build_rehearsal(ws, 0.1, 5, d.task_id, d.condition);
    REQUIRE(a.windows.size() == 10);
    std::set<float> starts;
    for (std::size_t i = 0; i < a.windows.size(); ++i) {
      CHECK(a.windows[i].m == b.windows[i].m);
      starts.insert(a.windows[i].m(0, 0));
    }
    CHECK(starts.size() == 10);  // distinct draws (values are continuous)
    auto c = build_rehearsal(ws, 0.1, 6, d.task_id, d.condition);
    bool same = true;
    for (std::size_t i = 0; i < a.windows.size(); ++i)
      same = same && (a.windows[i].m == c.windows[i].m);
    CHECK_FALSE(same);
  }
  SUBCASE("ceil rounding keeps at least one window") {
    auto buf = build_rehearsal(ws, 0.001, 5, d.task_id, d.condition);
    CHECK(buf.windows.size() == 1);
  }
  SUBCASE("xi outside (0,1] is rejected") {
    CHECK_THROWS_AS(build_rehearsal(ws, 0.0, 5, 0, d.condition), std::invalid_argument);
    CHECK_THROWS_AS(build_rehearsal(ws, 1.5, 5, 0, d.condition), std::invalid_argument);
  }
}

TEST_CASE("batch sampling") {
  auto d = synthetic_dataset(1, 160, 13);
  auto ws = split_windows(d, 16);  // 10 windows
  REQUIRE(ws.size() == 10);
  Rng rng(17);

  SUBCASE("default batch of 32 with uniform conditions") {
    auto batch = sample_batch(ws, d.condition, 32, rng);
    CHECK(batch.windows.shape == Shape{32, 16, 6});
    CHECK(batch.conditions.shape == Shape{32, 2});
    for (int i = 0; i < 32; ++i) {
      CHECK(batch.conditions.at2(i, 0) == 0.6f);
      CHECK(batch.conditions.at2(i, 1) == -0.8f);
    }
  }
  SUBCASE("single-window source repeats that window") {
    std::vector<SequenceWindow> one = {ws[4]};
    auto batch = sample_batch(one, d.condition, 5, rng);
    for (int i = 0; i < 5; ++i)
      for (int t = 0; t < 16; ++t)
        for (int j = 0; j < 6; ++j) CHECK(batch.windows.at3(i, t, j) == ws[4].m(t, j));
  }
  SUBCASE("empty source is rejected") {
    std::vector<SequenceWindow> none;
    CHECK_THROWS_AS(sample_batch(none, d.condition, 4, rng), std::invalid_argument);
  }
  SUBCASE("draw frequencies over 10 windows pass a chi-square test") {
    // tag each window with a distinct marker value so draws are countable
    for (std::size_t i = 0; i < ws.size(); ++i) ws[i].m(0, 0) = static_cast<float>(i);
    const int draws = 100000;
    std::vector<int> counts(10, 0);
    for (int rep = 0; rep < draws / 100; ++rep) {
      auto batch = sample_batch(ws, d.condition, 100, rng);
      for (int i = 0; i < 100; ++i)
        counts[static_cast<std::size_t>(batch.windows.at3(i, 0, 0))] += 1;
    }
    const double expect = draws / 10.0;
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
    // 9 degrees of freedom, p > 0.001 threshold
    CHECK(chi2 < 27.88);
  }
}

TEST_CASE("observation corruption") {
  auto d = synthetic_dataset(2, 64, 19);
  SUBCASE("eta = 0 leaves the dataset untouched") {
    auto out = corrupt_observations(d, 0.0, 0.5, 3);
    for (std::size_t e = 0; e < d.episodes.size(); ++e)
      CHECK(out.episodes[e].states == d.episodes[e].states);
  }
  SUBCASE("perturbations respect the bound and leave actions and rewards alone") {
    for (auto [eta, rho] : {std::pair{0.1, 0.5}, {0.5, 1.0}}) {
      // enough samples to see the clip engage at the larger eta
      auto big = synthetic_dataset(20, 200, 23);  // 20*200*4 = 16k values per arm
      auto out = corrupt_observations(big, eta, rho, 7);
      float max_delta = 0.0f;
      for (std::size_t e = 0; e < big.episodes.size(); ++e) {
        max_delta = std::max(
            max_delta,
            (out.episodes[e].states - big.episodes[e].states).cwiseAbs().maxCoeff());
        CHECK(out.episodes[e].actions == big.episodes[e].actions);
        CHECK(out.episodes[e].rewards == big.episodes[e].rewards);
      }
      CHECK(max_delta <= static_cast<float>(rho) + 1e-6f);
      CHECK(max_delta > 0.0f);
    }
  }
  SUBCASE("a million draws never exceed the bound") {
    auto big = synthetic_dataset(100, 200, 29);  // 100*200*4 = 80k states... use several seeds
    float worst = 0.0f;
    for (std::uint64_t seed = 0; seed < 13; ++seed) {
      auto out = corrupt_observations(big, 0.5, 1.0, seed);
      for (std::size_t e = 0; e < big.episodes.size(); ++e)
        worst = std::max(worst, (out.episodes[e].states - big.episodes[e].states)
                                    .cwiseAbs()
                                    .maxCoeff());
    }
    CHECK(worst <= 1.0f + 1e-6f);
  }
  SUBCASE("invalid arguments are rejected") {
    CHECK_THROWS_AS(corrupt_observations(d, -0.1, 0.5, 1), std::invalid_argument);
    CHECK_THROWS_AS(corrupt_observations(d, 0.1, 0.0, 1), std::invalid_argument);
  }
}
