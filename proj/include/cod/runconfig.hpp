#pragma once

#include "cod/denoiser.hpp"
#include "cod/evaluator.hpp"
#include "cod/trainer.hpp"

#include <string>
#include <vector>

namespace cod {

// Flat run configuration behind the sectioned key=value config format.
// Unknown keys are rejected before any compute; every random draw in a run
// traces back to one of the explicit seeds below.
struct RunConfig {
  // [env]
  int env_tasks = 4;
  std::vector<double> env_angles_deg = {0.0, 120.0, 200.0, 320.0};
  double env_dt = 0.1;
  double env_v_max = 2.0;
  double env_gain = 5.0;
  int env_episode_len = 200;
  int env_episodes_per_task = 50;
  double env_collect_noise = 0.1;
  double env_v0_speed_max = 1.0;
  double env_eta = 0.0;
  double env_rho = 0.5;
  std::uint64_t env_seed = 1;
  // [model]
  int model_seq_len = 16;
  int model_hidden = 32;
  std::vector<int> model_conv_mult = {1, 2, 4};
  int model_n_mid = 2;
  int model_groups = 8;
  std::string model_cond_mode = "task_vector";
  bool model_lora = false;
  int model_lora_rank = 64;
  std::uint64_t model_lora_seed = 101;
  std::uint64_t model_seed = 7;
  // [train]
  int train_steps_per_task = 3000;
  int train_batch = 32;
  double train_lr = 3e-4;
  int train_upsilon = 2;
  bool train_rehearsal = true;  // upsilon=inf turns this off
  double train_xi = 0.1;
  double train_dropout = 0.25;
  std::uint64_t train_seed = 11;
  int train_evals_per_task = 1;
  int train_eval_threads = 1;
  // [schedule]
  int schedule_k = 200;
  double schedule_beta_min = 1e-4;
  double schedule_beta_max = 0.02;
  // [sampler]
  double sampler_omega = 1.2;
  int sampler_stride = 10;
  bool sampler_use_cfg = true;
  // [eval]
  int eval_episodes = 10;
  std::uint64_t eval_seed = 3;

  void set(const std::string& key, const std::string& value);  // "section.key"
  std::string canonical_text() const;
  std::string hash() const;
  void validate() const;

  static RunConfig parse_text(const std::string& text);
  static RunConfig load(const std::string& path);

  int cond_dim() const { return model_cond_mode == "return_scalar" ? 1 : 2; }

  DenoiserConfig denoiser_config() const;
  TrainConfig train_config() const;
  EvalConfig eval_config() const;
  std::vector<PointDirTask> tasks() const;
};

}  // namespace cod
