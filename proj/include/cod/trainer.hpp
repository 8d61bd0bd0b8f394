#pragma once

#include "cod/adam.hpp"
#include "cod/dataset.hpp"
#include "cod/denoiser.hpp"
#include "cod/metrics.hpp"
#include "cod/schedule.hpp"

#include <functional>
#include <optional>
#include <sstream>
#include <vector>

namespace cod {

// Training knobs. upsilon is the rehearsal period in gradient steps;
// rehearsal == false is the "never rehearse" arm (upsilon = inf).
struct TrainConfig {
  int steps_per_task = 3000;  // delta
  int batch = 32;
  float lr = 3e-4f;
  int upsilon = 2;
  bool rehearsal = true;
  double xi = 0.1;
  double dropout_p = 0.25;
  int K = 200;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  int t_e = 16;
  double omega = 1.2;
  int stride = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps_per_task < 1) throw std::invalid_argument("train config: steps_per_task must be >= 1");
    if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
    if (!(lr > 0)) throw std::invalid_argument("train config: lr must be > 0");
    if (rehearsal && upsilon < 1)
      throw std::invalid_argument("train config: upsilon must be >= 1");
    if (!(xi > 0.0 && xi <= 1.0)) throw std::invalid_argument("train config: xi must be in (0,1]");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0))
      throw std::invalid_argument("train config: dropout must be in [0,1)");
    if (K < 1) throw std::invalid_argument("train config: K must be >= 1");
  }
};

struct TrainLogEntry {
  long global_step = 0;
  int task = 0;
  float loss = 0.0f;
  bool was_rehearsal = false;
  int rehearsal_task = -1;
};

struct LossResult {
  float loss = 0.0f;
  int n_dropped = 0;  // samples that saw the null condition
  std::unordered_map<std::string, Tensor<float>> grads;
};

// One Eq.-(1) estimate over a normalized batch: per-sample uniform step k,
// fresh Gaussian noise, per-sample condition dropout, squared-error of the
// predicted noise averaged over the batch. Draw order (k, eps, dropout) is
// fixed so runs are reproducible from the rng state.
inline LossResult diffusion_loss(const DenoiserParams<float>& params, const Batch& batch,
                                 const NoiseSchedule& sched, double dropout_p, Rng& rng) {
  const int b = batch.windows.dim(0);
  const int t_e = batch.windows.dim(1);
  const int c = batch.windows.dim(2);

  std::uniform_int_distribution<int> step_dist(1, sched.K);
  std::vector<int> k(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) k[static_cast<std::size_t>(i)] = step_dist(rng);

  Tensor<float> eps = randn<float>({b, t_e, c}, rng);

  std::bernoulli_distribution drop_dist(dropout_p);
  std::vector<char> dropped(static_cast<std::size_t>(b), 0);
  if (dropout_p > 0.0)
    for (int i = 0; i < b; ++i) dropped[static_cast<std::size_t>(i)] = drop_dist(rng) ? 1 : 0;

  Tensor<float> noisy({b, t_e, c});
  for (int i = 0; i < b; ++i) {
    const float a = static_cast<float>(std::sqrt(sched.alpha_bar_at(k[static_cast<std::size_t>(i)])));
    const float s = static_cast<float>(std::sqrt(1.0 - sched.alpha_bar_at(k[static_cast<std::size_t>(i)])));
    for (int t = 0; t < t_e; ++t)
      for (int j = 0; j < c; ++j)
        noisy.at3(i, t, j) = a * batch.windows.at3(i, t, j) + s * eps.at3(i, t, j);
  }

  Graph<float> g;
  ForwardBuild<float> fb = build_forward(g, params, noisy, k, batch.conditions, dropped, true);
  NodeId loss_node = g.scale(g.sum_squares(g.sub(fb.out, g.input(eps))), 1.0f / b);
  const float loss = g.value(loss_node).at(0);
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "diffusion_loss: non-finite loss " << loss << " (batch " << b << ", steps";
    for (int i = 0; i < std::min(b, 8); ++i) os << ' ' << k[static_cast<std::size_t>(i)];
    os << ")";
    throw std::runtime_error(os.str());
  }
  auto node_grads = g.backward(loss_node);
  LossResult r;
  r.loss = loss;
  for (char d : dropped) r.n_dropped += d ? 1 : 0;
  for (auto& [name, id] : fb.trainable_nodes) r.grads.emplace(name, std::move(node_grads.at(id)));
  return r;
}

using StepHook = std::function<void(long global_step)>;

// Algorithm-1 inner loop for task i: every upsilon-th step of a non-first
// task replays one uniformly drawn earlier task's frozen buffer, all other
// steps draw from the current task. One Adam update per step.
inline std::vector<TrainLogEntry> train_task(
    int task_index, const std::vector<SequenceWindow>& windows, const Eigen::VectorXf& condition,
    const std::vector<RehearsalBuffer>& buffers, const TrainConfig& cfg,
    const NoiseSchedule& sched, DenoiserParams<float>& params, AdamState<float>& adam,
    long global_step_base, Rng& rng, const StepHook& on_step = {}) {
  cfg.validate();
  if (static_cast<int>(buffers.size()) < task_index)
    throw std::invalid_argument("train_task: missing rehearsal buffer: have " +
                                std::to_string(buffers.size()) + ", training task " +
                                std::to_string(task_index));
  std::vector<TrainLogEntry> log;
  log.reserve(static_cast<std::size_t>(cfg.steps_per_task));
  for (int m = 0; m < cfg.steps_per_task; ++m) {
    const bool rehearse = cfg.rehearsal && task_index > 0 && (m % cfg.upsilon == 0);
    TrainLogEntry entry;
    entry.global_step = global_step_base + m;
    entry.task = task_index;
    entry.was_rehearsal = rehearse;
    Batch batch;
    if (rehearse) {
      std::uniform_int_distribution<int> pick(0, task_index - 1);
      const int j = pick(rng);
      entry.rehearsal_task = j;
      batch = sample_batch(buffers[static_cast<std::size_t>(j)], cfg.batch, rng);
    } else {
      batch = sample_batch(windows, condition, cfg.batch, rng);
    }
    LossResult lr = diffusion_loss(params, batch, sched, cfg.dropout_p, rng);
    adam_step(params.tensors, lr.grads, adam, cfg.lr);
    entry.loss = lr.loss;
    log.push_back(entry);
    if (on_step) on_step(entry.global_step + 1);
  }
  return log;
}

struct RunOptions {
  bool lora = false;
  int lora_rank = 64;
  std::uint64_t lora_seed = 101;
  int evals_per_task = 1;  // 1 = boundaries only; n > 1 adds n-1 interior points
};

// Scores for all tasks given the parameter snapshot and per-task normalizers.
using EvalFn = std::function<std::vector<double>(const DenoiserParams<float>&,
                                                 const std::vector<GaussianNormalizer>&, long)>;

struct RunResult {
  std::vector<DenoiserParams<float>> checkpoints;  // end of each task
  std::vector<RehearsalBuffer> buffers;
  std::vector<GaussianNormalizer> normalizers;
  ContinualLog log;
  std::vector<TrainLogEntry> train_log;
  DenoiserParams<float> final_params;
};

// Sequential training over the task list with rehearsal-buffer freezing and
// checkpoint-boundary evaluation, per the rehearsal objective: the loss form
// is identical for current and replayed sources.
inline RunResult run_continual(const std::vector<TrajectoryDataset>& tasks,
                               const TrainConfig& cfg, const DenoiserConfig& mcfg,
                               std::uint64_t model_seed, const EvalFn& eval,
                               const RunOptions& opt = {}) {
  cfg.validate();
  if (tasks.empty()) throw std::invalid_argument("run_continual: no tasks");
  for (const auto& t : tasks)
    if (t.d_s != tasks.front().d_s || t.d_a != tasks.front().d_a)
      throw std::invalid_argument("run_continual: tasks disagree on state/action dimensions");
  if (mcfg.seq_len != cfg.t_e)
    throw std::invalid_argument("run_continual: model seq_len != training T_e");

  const int I = static_cast<int>(tasks.size());
  RunResult out;
  out.log.task_count = I;
  out.log.delta = cfg.steps_per_task;

  // data preparation: window split and per-task normalization, current task
  // statistics only
  std::vector<std::vector<SequenceWindow>> windows(static_cast<std::size_t>(I));
  for (int i = 0; i < I; ++i) {
    auto raw = split_windows(tasks[static_cast<std::size_t>(i)], cfg.t_e);
    out.normalizers.push_back(GaussianNormalizer::fit(raw));
    for (auto& w : raw) w.m = out.normalizers.back().normalize(w.m);
    windows[static_cast<std::size_t>(i)] = std::move(raw);
  }

  DenoiserParams<float> params = init_denoiser<float>(mcfg, model_seed);
  NoiseSchedule sched = linear_schedule(cfg.K, cfg.beta_min, cfg.beta_max);
  AdamState<float> adam;

  auto evaluate_into_log = [&](long step) {
    if (eval) out.log.add(step, eval(params, out.normalizers, step));
  };
  evaluate_into_log(0);

  long global_step = 0;
  for (int i = 0; i < I; ++i) {
    if (opt.lora && i == 1 && !params.lora_attached) {
      params = attach_lora(params, opt.lora_rank, opt.lora_seed);
      adam = AdamState<float>();  // trainable set changed
    }
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    StepHook hook;
    if (opt.evals_per_task > 1 && eval) {
      const long period = cfg.steps_per_task / opt.evals_per_task;
      hook = [&, period](long step_done) {
        if (period > 0 && step_done % period == 0 && step_done % cfg.steps_per_task != 0)
          evaluate_into_log(step_done);
      };
    }
    auto log = train_task(i, windows[static_cast<std::size_t>(i)],
                          tasks[static_cast<std::size_t>(i)].condition, out.buffers, cfg, sched,
                          params, adam, global_step, rng, hook);
    out.train_log.insert(out.train_log.end(), log.begin(), log.end());
    global_step += cfg.steps_per_task;

    out.buffers.push_back(build_rehearsal(windows[static_cast<std::size_t>(i)], cfg.xi,
                                          mix_seed(cfg.seed, 0xb0f + static_cast<std::uint64_t>(i)),
                                          tasks[static_cast<std::size_t>(i)].task_id,
                                          tasks[static_cast<std::size_t>(i)].condition));
    out.checkpoints.push_back(params);
    evaluate_into_log(global_step);
  }
  out.final_params = params;
  return out;
}

}  // namespace cod
