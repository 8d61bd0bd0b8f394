#include "doctest.h"

#include "cod/sampler.hpp"

#include <cmath>

using namespace cod;

namespace {

// Model predicting a fixed per-sample tensor, tiled over whatever batch the
// sampler sends (CFG stacks the conditional and null queries).
template <typename T>
NoiseModel<T> constant_model(int seq_len, int channels, int state_dim, Tensor<T> eps) {
  NoiseModel<T> m;
  m.seq_len = seq_len;
  m.channels = channels;
  m.state_dim = state_dim;
  m.predict = [eps, seq_len, channels](const Tensor<T>& tau, const std::vector<int>&,
                                       const Tensor<T>&, const std::vector<char>&) {
    const int B = tau.dim(0);
    const std::int64_t n = static_cast<std::int64_t>(seq_len) * channels;
    Tensor<T> out({B, seq_len, channels});
    for (int b = 0; b < B; ++b) out.data.segment(b * n, n) = eps.data;
    return out;
  };
  return m;
}

}  // namespace

TEST_CASE("forward noise") {
  auto sched = linear_schedule(50);
  Rng rng(3);
  auto tau0 = randn<double>({4, 6}, rng);

  SUBCASE("zero noise scales the sample by sqrt(alpha_bar)") {
    auto out = forward_noise(tau0, 7, Tensor<double>::zeros({4, 6}), sched);
    const double a = std::sqrt(sched.alpha_bar_at(7));
    Eigen::ArrayXd want = a * tau0.data + std::sqrt(1.0 - sched.alpha_bar_at(7)) *
                                              Eigen::ArrayXd::Zero(tau0.numel());
    CHECK((out.data == want).all());
  }
  SUBCASE("at k=K the output is noise-dominated") {
    auto strong = linear_schedule(200, 0.05, 0.2);  // alpha_bar[K] ~ 0
    auto eps = randn<double>({4, 6}, rng);
    auto out = forward_noise(tau0, 200, eps, strong);
    const double bound = std::sqrt(strong.alpha_bar_at(200)) *
                         std::sqrt(tau0.data.square().sum());
    CHECK(std::sqrt((out.data - eps.data).square().sum()) <=
          bound + 1e-9 + (1 - std::sqrt(1 - strong.alpha_bar_at(200))) *
                              std::sqrt(eps.data.square().sum()));
  }
  SUBCASE("Monte-Carlo moments at k=K/2") {
    const int k = 25;
    const int n = 100000;
    auto small = Tensor<double>::from({2, 3}, {0.4, -1.2, 2.0, 0.0, 0.7, -0.3});
    Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(6), sum_sq = Eigen::ArrayXd::Zero(6);
    Rng mc(11);
    for (int i = 0; i < n; ++i) {
      auto out = forward_noise(small, k, randn<double>({2, 3}, mc), sched);
      sum += out.data;
      sum_sq += out.data.square();
    }
    const double a = std::sqrt(sched.alpha_bar_at(k));
    const double var_want = 1.0 - sched.alpha_bar_at(k);
    const double sigma_mean = std::sqrt(var_want / n);
    for (int i = 0; i < 6; ++i) {
      const double mean = sum[i] / n;
      const double var = sum_sq[i] / n - mean * mean;
      CHECK(std::abs(mean - a * small.at(i)) < 4.0 * sigma_mean);
      CHECK(std::abs(var - var_want) < 0.05 * var_want);
    }
  }
  SUBCASE("step outside the schedule is rejected") {
    CHECK_THROWS_AS(forward_noise(tau0, 0, tau0, sched), std::invalid_argument);
    CHECK_THROWS_AS(forward_noise(tau0, 51, tau0, sched), std::invalid_argument);
  }
}

TEST_CASE("classifier-free guidance combination") {
  Rng rng(5);
  auto eu = randn<double>({3, 4}, rng);
  auto ec = randn<double>({3, 4}, rng);
  SUBCASE("omega 0 returns the unconditional noise") {
    CHECK((cfg_combine(eu, ec, 0.0).data == eu.data).all());
  }
  SUBCASE("omega 1 returns the conditional noise") {
    CHECK((cfg_combine(eu, ec, 1.0).data - ec.data).abs().maxCoeff() < 1e-15);
  }
  SUBCASE("equal inputs are a fixed point for any omega, including 1.2") {
    for (double w : {-0.5, 0.0, 1.0, 1.2, 3.7})
      CHECK((cfg_combine(eu, eu, w).data == eu.data).all());
  }
  SUBCASE("affine in omega") {
    for (auto [w1, w2] : {std::pair{0.3, 0.9}, {1.2, -0.4}, {2.0, 2.0}}) {
      Eigen::ArrayXd lhs = cfg_combine(eu, ec, w1).data + cfg_combine(eu, ec, w2).data;
      Eigen::ArrayXd rhs = cfg_combine(eu, ec, w1 + w2).data + cfg_combine(eu, ec, 0.0).data;
      CHECK((lhs - rhs).abs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("ddpm reverse step") {
  SUBCASE("k=1 with the true noise recovers tau0; no noise is injected") {
    auto sched = linear_schedule(20);
    Rng rng(9);
    auto tau0 = randn<double>({5, 3}, rng);
    auto eps = randn<double>({5, 3}, rng);
    auto tau1 = forward_noise(tau0, 1, eps, sched);
    auto big_z = Tensor<double>::constant({5, 3}, 1e6);  // must be multiplied by exactly zero
    auto rec = ddpm_reverse_step(tau1, eps, 1, sched, big_z);
    CHECK((rec.data - tau0.data).abs().maxCoeff() < 1e-5);
  }
  SUBCASE("zero is a fixed point") {
    auto sched = linear_schedule(20);
    auto z = Tensor<double>::zeros({2, 2});
    auto out = ddpm_reverse_step(Tensor<double>::zeros({2, 2}), Tensor<double>::zeros({2, 2}), 5,
                                 sched, z);
    CHECK(out.data.abs().maxCoeff() == 0.0);
  }
  SUBCASE("two-step schedule scalar hand evaluation") {
    auto sched = linear_schedule(2, 0.1, 0.2);
    auto tau = Tensor<double>::constant({1}, 1.0);
    auto eps = Tensor<double>::constant({1}, 0.5);
    auto out = ddpm_reverse_step(tau, eps, 2, sched, Tensor<double>::zeros({1}));
    // independent evaluation of the printed two-term combination
    const double tau_bar = (1.0 - std::sqrt(1.0 - 0.72) * 0.5) / std::sqrt(0.72);
    const double c1 = std::sqrt(0.9) * 0.2 / (1.0 - 0.72);
    const double c2 = std::sqrt(0.8) * (1.0 - 0.9) / (1.0 - 0.72);
    CHECK(out.at(0) == doctest::Approx(c1 * tau_bar + c2 * 1.0).epsilon(1e-12));
    CHECK(out.at(0) == doctest::Approx(0.9067454250677656).epsilon(1e-9));
  }
  SUBCASE("step bounds enforced") {
    auto sched = linear_schedule(4);
    auto t = Tensor<double>::zeros({1});
    CHECK_THROWS_AS(ddpm_reverse_step(t, t, 0, sched, t), std::invalid_argument);
    CHECK_THROWS_AS(ddpm_reverse_step(t, t, 5, sched, t), std::invalid_argument);
  }
}

TEST_CASE("ddim step") {
  auto sched = linear_schedule(64);
  Rng rng(13);
  auto tau0 = randn<double>({4, 4}, rng);
  auto eps = randn<double>({4, 4}, rng);

  SUBCASE("oracle-noise single jump to 0 recovers tau0 to 1e-10") {
    for (int k : {1, 5, 32, 64}) {
      auto tau_k = forward_noise(tau0, k, eps, sched);
      auto rec = ddim_step(tau_k, eps, k, 0, sched);
      CHECK((rec.data - tau0.data).abs().maxCoeff() < 1e-10);
    }
  }
  SUBCASE("float mode recovery within 1e-4") {
    auto tau0f = cast<float>(tau0);
    auto epsf = cast<float>(eps);
    auto tau_k = forward_noise(tau0f, 40, epsf, sched);
    auto rec = ddim_step(tau_k, epsf, 40, 0, sched);
    CHECK((rec.data - tau0f.data).abs().maxCoeff() < 1e-4f);
  }
  SUBCASE("unit-stride composition matches the single jump with oracle noise") {
    const int K = 64;
    auto tau = forward_noise(tau0, K, eps, sched);
    for (int k = K; k >= 1; --k) tau = ddim_step(tau, eps, k, k - 1, sched);
    auto single = ddim_step(forward_noise(tau0, K, eps, sched), eps, K, 0, sched);
    CHECK((tau.data - single.data).abs().maxCoeff() < 1e-5);
  }
  SUBCASE("index violations are rejected") {
    auto t = Tensor<double>::zeros({1});
    CHECK_THROWS_AS(ddim_step(t, t, 3, 3, sched), std::invalid_argument);
    CHECK_THROWS_AS(ddim_step(t, t, 3, -1, sched), std::invalid_argument);
    CHECK_THROWS_AS(ddim_step(t, t, 65, 0, sched), std::invalid_argument);
  }
}

TEST_CASE("generation") {
  auto sched = linear_schedule(200);
  const int Te = 8, C = 6, ds = 4;

  SUBCASE("first state survives bit-exactly and every transition sees it") {
    std::vector<double> fs = {0.25, -1.5, 3.0, 0.125};
    int calls = 0;
    NoiseModel<double> m;
    m.seq_len = Te;
    m.channels = C;
    m.state_dim = ds;
    m.predict = [&](const Tensor<double>& tau, const std::vector<int>&, const Tensor<double>&,
                    const std::vector<char>&) {
      ++calls;
      for (int b = 0; b < tau.dim(0); ++b)
        for (int i = 0; i < ds; ++i) CHECK(tau.at3(b, 0, i) == fs[static_cast<std::size_t>(i)]);
      return Tensor<double>::zeros(tau.shape);
    };
    GenerationRequest<double> req;
    req.first_state = fs;
    req.condition = {1.0, 0.0};
    req.stride = 10;
    req.seed = 77;
    GuidanceConfig<double> guide;
    auto win = generate(m, req, sched, guide);
    CHECK(win.shape == Shape{Te, C});
    for (int i = 0; i < ds; ++i) CHECK(win.at2(0, i) == fs[static_cast<std::size_t>(i)]);
    // 20 reverse transitions at stride 10; the conditional and null queries
    // share one stacked model call per transition
    CHECK(calls == 20);
  }

  SUBCASE("stride 1 runs the full stochastic chain") {
    int calls = 0;
    NoiseModel<double> m = constant_model<double>(Te, C, ds, Tensor<double>::zeros({1, Te, C}));
    auto base = m.predict;
    m.predict = [&](const Tensor<double>& tau, const std::vector<int>& k, const Tensor<double>& c,
                    const std::vector<char>& d) {
      ++calls;
      return base(tau, k, c, d);
    };
    GenerationRequest<double> req;
    req.first_state = {0, 0, 0, 0};
    req.condition = {1.0, 0.0};
    req.stride = 1;
    auto win = generate(m, req, sched, GuidanceConfig<double>{1.2, true});
    CHECK(calls == 200);
    CHECK(win.all_finite());
  }

  SUBCASE("fixed seed reproduces the window bit-exactly") {
    Rng noise_rng(4);
    auto fixed = randn<double>({1, Te, C}, noise_rng);
    NoiseModel<double> m = constant_model<double>(Te, C, ds, fixed);
    GenerationRequest<double> req;
    req.first_state = {1.0, 2.0, 3.0, 4.0};
    req.condition = {0.0, 1.0};
    req.stride = 10;
    req.seed = 123;
    auto a = generate(m, req, sched, GuidanceConfig<double>{});
    auto b = generate(m, req, sched, GuidanceConfig<double>{});
    CHECK((a.data == b.data).all());
  }

  SUBCASE("dimension mismatch is rejected") {
    NoiseModel<double> m = constant_model<double>(Te, C, ds, Tensor<double>::zeros({1, Te, C}));
    GenerationRequest<double> req;
    req.first_state = {1.0, 2.0};  // wrong d_s
    req.condition = {0.0, 1.0};
    CHECK_THROWS_AS(generate(m, req, sched, GuidanceConfig<double>{}), std::invalid_argument);
  }
}
