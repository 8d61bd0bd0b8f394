#include "doctest.h"

#include "cod/pointmass.hpp"
#include "cod/trainer.hpp"

#include <numeric>

using namespace cod;

namespace {

DenoiserConfig tiny_model() {
  DenoiserConfig cfg;
  cfg.seq_len = 8;
  cfg.channel_dim = 6;
  cfg.hidden = 8;
  cfg.conv_mult = {1, 2};
  cfg.n_down = 2;
  cfg.n_mid = 1;
  cfg.n_up = 1;
  cfg.cond_dim = 2;
  cfg.groups = 4;
  return cfg;
}

TrainConfig tiny_train() {
  TrainConfig cfg;
  cfg.steps_per_task = 10;
  cfg.batch = 8;
  cfg.lr = 1e-3f;
  cfg.K = 50;
  cfg.t_e = 8;
  cfg.seed = 5;
  return cfg;
}

std::vector<SequenceWindow> random_windows(int n, int t_e, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<SequenceWindow> ws(static_cast<std::size_t>(n));
  for (auto& w : ws) {
    w.m.resize(t_e, 6);
    for (int t = 0; t < t_e; ++t)
      for (int j = 0; j < 6; ++j) w.m(t, j) = g(rng);
  }
  return ws;
}

TrajectoryDataset tiny_task_data(int task_id, float cx, float cy, std::uint64_t seed) {
  TrajectoryDataset d;
  d.task_id = task_id;
  d.condition = Eigen::Vector2f(cx, cy);
  d.d_s = 4;
  d.d_a = 2;
  d.L = 16;
  Rng rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  for (int e = 0; e < 4; ++e) {
    Episode ep;
    ep.states.resize(16, 4);
    ep.actions.resize(16, 2);
    ep.rewards.resize(16);
    for (int t = 0; t < 16; ++t) {
      for (int j = 0; j < 4; ++j) ep.states(t, j) = g(rng) + cx;
      for (int j = 0; j < 2; ++j) ep.actions(t, j) = g(rng) + cy;
      ep.rewards(t) = g(rng);
    }
    d.episodes.push_back(std::move(ep));
  }
  return d;
}

}  // namespace

TEST_CASE("diffusion loss") {
  auto sched = linear_schedule(50);
  auto params = init_denoiser<float>(tiny_model(), 3);

  SUBCASE("zero-output model estimates the squared norm of the noise") {
    auto zeroed = params;
    zeroed.tensors["final.out.k"].data.setZero();
    zeroed.tensors["final.out.b"].data.setZero();
    Rng rng(1);
    const int batch = 200, rounds = 50;  // 10^4 samples
    double mean = 0.0;
    auto ws = random_windows(30, 8, 2);
    Eigen::VectorXf cond = Eigen::Vector2f(1.0f, 0.0f);
    for (int r = 0; r < rounds; ++r) {
      Batch b = sample_batch(ws, cond, batch, rng);
      mean += diffusion_loss(zeroed, b, sched, 0.25, rng).loss;
    }
    mean /= rounds;
    const double want = 8 * 6;  // T_e * (d_s + d_a)
    const double five_sigma = 5.0 * std::sqrt(2.0 * want / (batch * rounds));
    CHECK(std::abs(mean - want) < five_sigma);
  }
  SUBCASE("loss is nonnegative") {
    Rng rng(2);
    auto ws = random_windows(10, 8, 3);
    Eigen::VectorXf cond = Eigen::Vector2f(0.0f, 1.0f);
    for (int r = 0; r < 5; ++r) {
      Batch b = sample_batch(ws, cond, 16, rng);
      CHECK(diffusion_loss(params, b, sched, 0.25, rng).loss >= 0.0f);
    }
  }
  SUBCASE("dropout 0 never uses the null condition") {
    Rng rng(3);
    auto ws = random_windows(10, 8, 4);
    Eigen::VectorXf cond = Eigen::Vector2f(0.5f, 0.5f);
    for (int r = 0; r < 10; ++r) {
      Batch b = sample_batch(ws, cond, 32, rng);
      CHECK(diffusion_loss(params, b, sched, 0.0, rng).n_dropped == 0);
    }
  }
  SUBCASE("dropout 0.25 drops roughly a quarter of samples") {
    Rng rng(4);
    auto ws = random_windows(10, 8, 5);
    Eigen::VectorXf cond = Eigen::Vector2f(0.5f, 0.5f);
    int dropped = 0;
    const int total = 32 * 40;
    for (int r = 0; r < 40; ++r) {
      Batch b = sample_batch(ws, cond, 32, rng);
      dropped += diffusion_loss(params, b, sched, 0.25, rng).n_dropped;
    }
    CHECK(dropped > total * 0.18);
    CHECK(dropped < total * 0.32);
  }
}

TEST_CASE("rehearsal scheduling follows the period law") {
  auto sched = linear_schedule(50);
  auto params = init_denoiser<float>(tiny_model(), 9);
  auto cfg = tiny_train();
  auto windows = random_windows(20, 8, 7);
  Eigen::VectorXf cond = Eigen::Vector2f(1.0f, 0.0f);
  std::vector<RehearsalBuffer> buffers;
  buffers.push_back(build_rehearsal(random_windows(20, 8, 8), 0.5, 1, 0, cond));

  SUBCASE("task 0 never rehearses regardless of the period") {
    AdamState<float> adam;
    Rng rng(1);
    auto log = train_task(0, windows, cond, {}, cfg, sched, params, adam, 0, rng);
    for (const auto& e : log) CHECK_FALSE(e.was_rehearsal);
  }
  SUBCASE("task 1 with 10 steps at period 2 rehearses exactly 5 times, from step 0") {
    AdamState<float> adam;
    Rng rng(1);
    auto log = train_task(1, windows, cond, buffers, cfg, sched, params, adam, 0, rng);
    int rehearsed = 0;
    for (const auto& e : log) {
      if (e.was_rehearsal) {
        ++rehearsed;
        CHECK(e.rehearsal_task == 0);
        CHECK(e.global_step % 2 == 0);
      }
    }
    CHECK(rehearsed == 5);
    CHECK(log.front().was_rehearsal);
  }
  SUBCASE("count equals ceil(steps / period) across a grid") {
    for (int delta : {7, 10, 24}) {
      for (int upsilon : {1, 2, 3, 5, 9}) {
        auto c = cfg;
        c.steps_per_task = delta;
        c.upsilon = upsilon;
        AdamState<float> adam;
        Rng rng(2);
        auto p = params;
        auto log = train_task(2, windows, cond, {buffers[0], buffers[0]}, c, sched, p, adam, 0,
                              rng);
        int rehearsed = 0;
        for (const auto& e : log) rehearsed += e.was_rehearsal ? 1 : 0;
        CHECK(rehearsed == (delta + upsilon - 1) / upsilon);
      }
    }
  }
  SUBCASE("disabled rehearsal is the inf-period ablation") {
    auto c = cfg;
    c.rehearsal = false;
    AdamState<float> adam;
    Rng rng(3);
    auto log = train_task(1, windows, cond, buffers, c, sched, params, adam, 0, rng);
    for (const auto& e : log) CHECK_FALSE(e.was_rehearsal);
  }
  SUBCASE("a missing buffer is an error") {
    AdamState<float> adam;
    Rng rng(4);
    CHECK_THROWS_WITH_AS(train_task(2, windows, cond, buffers, cfg, sched, params, adam, 0, rng),
                         doctest::Contains("buffer"), std::invalid_argument);
  }
}

TEST_CASE("continual run over two tasks") {
  std::vector<TrajectoryDataset> tasks = {tiny_task_data(0, 1.0f, 0.0f, 1),
                                          tiny_task_data(1, 0.0f, 1.0f, 2)};
  auto mcfg = tiny_model();
  auto cfg = tiny_train();
  cfg.steps_per_task = 12;
  cfg.t_e = 8;

  SUBCASE("single-task run reduces to plain diffusion training") {
    std::vector<TrajectoryDataset> one = {tasks[0]};
    auto res = run_continual(one, cfg, mcfg, 11, {});
    CHECK(res.buffers.size() == 1);
    CHECK(res.checkpoints.size() == 1);
    CHECK(res.train_log.size() == 12);
    for (const auto& e : res.train_log) CHECK_FALSE(e.was_rehearsal);
  }
  SUBCASE("buffers freeze with the xi fraction and the log covers the grid") {
    cfg.xi = 0.25;
    int evals = 0;
    EvalFn eval = [&](const DenoiserParams<float>&, const std::vector<GaussianNormalizer>& norms,
                      long) {
      ++evals;
      CHECK(norms.size() == 2);
      return std::vector<double>{0.5, 0.5};
    };
    auto res = run_continual(tasks, cfg, mcfg, 11, eval);
    REQUIRE(res.buffers.size() == 2);
    // 4 episodes, L=16, T_e=8 -> 2 windows per episode -> 8 windows; ceil(0.25*8)=2
    CHECK(res.buffers[0].windows.size() == 2);
    CHECK(res.buffers[1].windows.size() == 2);
    CHECK(evals == 3);  // steps 0, delta, 2*delta
    CHECK(res.log.has_full_grid());
    CHECK(compute_metrics(res.log).P == doctest::Approx(0.5));
  }
  SUBCASE("identical config and seeds give identical final parameters") {
    auto a = run_continual(tasks, cfg, mcfg, 11, {});
    auto b = run_continual(tasks, cfg, mcfg, 11, {});
    REQUIRE(a.final_params.tensors.size() == b.final_params.tensors.size());
    for (std::size_t i = 0; i < a.final_params.tensors.size(); ++i)
      CHECK((a.final_params.tensors.values[i].data == b.final_params.tensors.values[i].data)
                .all());
    auto c = run_continual(tasks, cfg, mcfg, 12, {});
    bool same = true;
    for (std::size_t i = 0; i < a.final_params.tensors.size(); ++i)
      same = same &&
             (a.final_params.tensors.values[i].data == c.final_params.tensors.values[i].data)
                 .all();
    CHECK_FALSE(same);
  }
  SUBCASE("the lora arm attaches adapters after the first task") {
    RunOptions opt;
    opt.lora = true;
    opt.lora_rank = 3;
    auto res = run_continual(tasks, cfg, mcfg, 11, {}, opt);
    CHECK(res.final_params.lora_attached);
    CHECK(res.final_params.lora_rank == 3);
    CHECK_FALSE(res.checkpoints[0].lora_attached);
    CHECK(res.checkpoints[1].lora_attached);
  }
  SUBCASE("mismatched dimensions are rejected") {
    auto bad = tasks;
    bad[1].d_s = 3;
    CHECK_THROWS_AS(run_continual(bad, cfg, mcfg, 11, {}), std::invalid_argument);
  }
}

TEST_CASE("learning sanity: loss halves on a fixed tiny dataset") {
  auto sched = linear_schedule(200);
  DenoiserConfig mcfg = tiny_model();
  mcfg.hidden = 16;
  mcfg.groups = 8;
  auto params = init_denoiser<float>(mcfg, 17);
  TrainConfig cfg = tiny_train();
  cfg.steps_per_task = 500;
  cfg.batch = 16;
  cfg.lr = 3e-3f;
  cfg.K = 200;
  cfg.rehearsal = false;

  // 20 fixed windows of real rollout structure
  auto task = PointDirTask::from_angle(0, 1.0);
  auto data = collect(task, 2, noisy_expert_policy(task.gain, 0.1), 13);
  auto windows = split_windows(data, 8);
  windows.resize(20);
  auto norm = GaussianNormalizer::fit(windows);
  for (auto& w : windows) w.m = norm.normalize(w.m);

  Eigen::VectorXf cond = task.condition();
  AdamState<float> adam;
  Rng rng(7);
  auto log = train_task(0, windows, cond, {}, cfg, sched, params, adam, 0, rng);
  auto mean_range = [&](std::size_t from, std::size_t to) {
    double s = 0.0;
    for (std::size_t i = from; i < to; ++i) s += log[i].loss;
    return s / static_cast<double>(to - from);
  };
  const double first50 = mean_range(0, 50);
  const double last50 = mean_range(450, 500);
  CHECK(last50 < 0.5 * first50);
}
