#include "cod/pointmass.hpp"

#include <cmath>
#include <stdexcept>

namespace cod {

PointDirTask PointDirTask::from_angle(int id, double angle_rad, double dt, double v_max,
                                      int episode_len, double gain) {
  PointDirTask t;
  t.id = id;
  t.angle = angle_rad;
  t.ux = std::cos(angle_rad);
  t.uy = std::sin(angle_rad);
  t.dt = dt;
  t.v_max = v_max;
  t.episode_len = episode_len;
  t.gain = gain;
  return t;
}

StepResult env_step(const PointDirTask& task, const EnvState& s, double ax, double ay) {
  if (s.t >= task.episode_len)
    throw std::logic_error("env_step: episode already finished at t=" + std::to_string(s.t));
  ax = std::clamp(ax, -1.0, 1.0);
  ay = std::clamp(ay, -1.0, 1.0);
  double vx = s.vx + ax * task.dt;
  double vy = s.vy + ay * task.dt;
  const double speed = std::hypot(vx, vy);
  if (speed > task.v_max) {
    vx *= task.v_max / speed;
    vy *= task.v_max / speed;
  }
  StepResult r;
  r.state.x = s.x + vx * task.dt;
  r.state.y = s.y + vy * task.dt;
  r.state.vx = vx;
  r.state.vy = vy;
  r.state.t = s.t + 1;
  r.reward = vx * task.ux + vy * task.uy;
  return r;
}

std::array<double, 2> expert_action(const EnvState& s, const PointDirTask& task, double gain) {
  const double ax = std::clamp(gain * (task.v_max * task.ux - s.vx), -1.0, 1.0);
  const double ay = std::clamp(gain * (task.v_max * task.uy - s.vy), -1.0, 1.0);
  return {ax, ay};
}

Policy expert_policy(double gain) {
  return [gain](const EnvState& s, const PointDirTask& task, Rng&) {
    return expert_action(s, task, gain);
  };
}

Policy noisy_expert_policy(double gain, double noise_std) {
  return [gain, noise_std](const EnvState& s, const PointDirTask& task, Rng& rng) {
    auto a = expert_action(s, task, gain);
    std::normal_distribution<double> dist(0.0, noise_std);
    a[0] = std::clamp(a[0] + dist(rng), -1.0, 1.0);
    a[1] = std::clamp(a[1] + dist(rng), -1.0, 1.0);
    return a;
  };
}

TrajectoryDataset collect(const PointDirTask& task, int n_episodes, const Policy& policy,
                          std::uint64_t seed, double v0_speed_max) {
  if (n_episodes < 1) throw std::invalid_argument("collect: n_episodes must be >= 1");
  TrajectoryDataset d;
  d.task_id = task.id;
  d.condition = task.condition();
  d.d_s = PointDirTask::kStateDim;
  d.d_a = PointDirTask::kActionDim;
  d.L = task.episode_len;
  d.episodes.reserve(static_cast<std::size_t>(n_episodes));
  for (int e = 0; e < n_episodes; ++e) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(e)));
    Episode ep;
    ep.states.resize(d.L, d.d_s);
    ep.actions.resize(d.L, d.d_a);
    ep.rewards.resize(d.L);
    EnvState s;
    if (v0_speed_max > 0.0) {
      std::uniform_real_distribution<double> angle(0.0, 2.0 * 3.14159265358979323846);
      std::uniform_real_distribution<double> speed(0.0, v0_speed_max);
      const double phi = angle(rng);
      const double r = speed(rng);
      s.vx = r * std::cos(phi);
      s.vy = r * std::sin(phi);
    }
    for (int t = 0; t < d.L; ++t) {
      ep.states.row(t) = s.observation().transpose();
      const auto a = policy(s, task, rng);
      ep.actions(t, 0) = static_cast<float>(a[0]);
      ep.actions(t, 1) = static_cast<float>(a[1]);
      StepResult r = env_step(task, s, a[0], a[1]);
      ep.rewards(t) = static_cast<float>(r.reward);
      s = r.state;
    }
    d.episodes.push_back(std::move(ep));
  }
  return d;
}

}  // namespace cod
