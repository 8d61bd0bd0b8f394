#pragma once

#include "cod/dataset.hpp"

#include <array>
#include <functional>

namespace cod {

// Directional point-mass task: maximize speed along the goal direction.
// State fed to the diffuser is (x, y, vx, vy); actions are 2-d in [-1,1].
struct PointDirTask {
  int id = 0;
  double angle = 0.0;  // radians
  double ux = 1.0, uy = 0.0;
  double dt = 0.1;
  double v_max = 2.0;
  int episode_len = 200;
  double gain = 5.0;

  static constexpr int kStateDim = 4;
  static constexpr int kActionDim = 2;

  static PointDirTask from_angle(int id, double angle_rad, double dt = 0.1, double v_max = 2.0,
                                 int episode_len = 200, double gain = 5.0);

  Eigen::VectorXf condition() const {
    Eigen::VectorXf c(2);
    c << static_cast<float>(ux), static_cast<float>(uy);
    return c;
  }
};

struct EnvState {
  double x = 0.0, y = 0.0;
  double vx = 0.0, vy = 0.0;
  int t = 0;

  Eigen::VectorXf observation() const {
    Eigen::VectorXf o(4);
    o << static_cast<float>(x), static_cast<float>(y), static_cast<float>(vx),
        static_cast<float>(vy);
    return o;
  }
};

struct StepResult {
  EnvState state;
  double reward = 0.0;
};

// v' = clip_norm(v + a*dt, v_max); x' = x + v'*dt; reward = v' . u
StepResult env_step(const PointDirTask& task, const EnvState& s, double ax, double ay);

std::array<double, 2> expert_action(const EnvState& s, const PointDirTask& task, double gain);

using Policy = std::function<std::array<double, 2>(const EnvState&, const PointDirTask&, Rng&)>;

Policy expert_policy(double gain);
Policy noisy_expert_policy(double gain, double noise_std);

// Episodes start at the origin; v0_speed_max > 0 draws the initial velocity
// uniformly from a disk so the corpus covers recovery maneuvers, not just
// the from-rest ramp.
TrajectoryDataset collect(const PointDirTask& task, int n_episodes, const Policy& policy,
                          std::uint64_t seed, double v0_speed_max = 0.0);

}  // namespace cod
