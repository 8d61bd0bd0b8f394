#pragma once

#include "cod/dataset.hpp"
#include "cod/denoiser.hpp"
#include "cod/metrics.hpp"
#include "cod/pointmass.hpp"
#include "cod/sampler.hpp"

#include <atomic>
#include <thread>
#include <vector>

namespace cod {

struct EvalConfig {
  int episodes = 10;
  int stride = 10;
  double omega = 1.2;
  bool use_cfg = true;
  std::uint64_t seed = 0;
};

// Receding-horizon evaluation: at every environment step, regenerate a full
// window conditioned on the normalized current state and the task condition,
// then execute only its first action. Episodes run in lockstep so the
// denoiser sees one batch per environment step. Returns the mean episode
// return normalized by the pinned expert reference, clamped to [0,1].
inline double evaluate_task(const DenoiserParams<float>& params, const GaussianNormalizer& norm,
                            const PointDirTask& task, double reference_return,
                            const NoiseSchedule& sched, const EvalConfig& cfg) {
  if (params.cfg.channel_dim != PointDirTask::kStateDim + PointDirTask::kActionDim)
    throw std::invalid_argument("evaluate_task: model channel dim " +
                                std::to_string(params.cfg.channel_dim) +
                                " != d_s + d_a = " +
                                std::to_string(PointDirTask::kStateDim + PointDirTask::kActionDim));
  const int B = cfg.episodes;
  const int d_s = PointDirTask::kStateDim;
  NoiseModel<float> model = make_noise_model(params, d_s);
  GuidanceConfig<float> guide{static_cast<float>(cfg.omega), cfg.use_cfg};

  Tensor<float> conds({B, static_cast<int>(task.condition().size())});
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < task.condition().size(); ++j) conds.at2(b, j) = task.condition()(j);

  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(task.id) * 7919 + 1));
  std::vector<EnvState> envs(static_cast<std::size_t>(B));
  std::vector<double> returns(static_cast<std::size_t>(B), 0.0);
  std::vector<std::vector<float>> first_states(static_cast<std::size_t>(B),
                                               std::vector<float>(static_cast<std::size_t>(d_s)));
  for (int t = 0; t < task.episode_len; ++t) {
    for (int b = 0; b < B; ++b) {
      Eigen::VectorXf s = norm.normalize_state(envs[static_cast<std::size_t>(b)].observation());
      for (int j = 0; j < d_s; ++j)
        first_states[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)] = s(j);
    }
    Tensor<float> tau =
        generate_batch(model, first_states, conds, cfg.stride, sched, guide, rng);
    for (int b = 0; b < B; ++b) {
      Eigen::VectorXf a(PointDirTask::kActionDim);
      for (int j = 0; j < PointDirTask::kActionDim; ++j) a(j) = tau.at3(b, 0, d_s + j);
      a = norm.denormalize_action(a, d_s);
      StepResult r = env_step(task, envs[static_cast<std::size_t>(b)], a(0), a(1));
      envs[static_cast<std::size_t>(b)] = r.state;
      returns[static_cast<std::size_t>(b)] += r.reward;
    }
  }
  return score_from_returns(returns, reference_return);
}

// Checkpoint-time scores for every task; optionally fans out across tasks on
// immutable parameter snapshots.
inline std::vector<double> evaluate_all_tasks(const DenoiserParams<float>& params,
                                              const std::vector<GaussianNormalizer>& normalizers,
                                              const std::vector<PointDirTask>& tasks,
                                              const std::vector<double>& references,
                                              const NoiseSchedule& sched, const EvalConfig& cfg,
                                              int threads = 1) {
  const int n = static_cast<int>(tasks.size());
  std::vector<double> scores(static_cast<std::size_t>(n), 0.0);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i)
      scores[static_cast<std::size_t>(i)] =
          evaluate_task(params, normalizers[static_cast<std::size_t>(i)],
                        tasks[static_cast<std::size_t>(i)],
                        references[static_cast<std::size_t>(i)], sched, cfg);
    return scores;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  for (int w = 0; w < std::min(threads, n); ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1))
        scores[static_cast<std::size_t>(i)] =
            evaluate_task(params, normalizers[static_cast<std::size_t>(i)],
                          tasks[static_cast<std::size_t>(i)],
                          references[static_cast<std::size_t>(i)], sched, cfg);
    });
  }
  for (auto& th : pool) th.join();
  return scores;
}

}  // namespace cod
