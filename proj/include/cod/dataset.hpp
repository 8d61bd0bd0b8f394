#pragma once

#include "cod/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace cod {

struct Episode {
  Eigen::MatrixXf states;   // [L, d_s]
  Eigen::MatrixXf actions;  // [L, d_a]
  Eigen::VectorXf rewards;  // [L]
};

// Offline data for one task: fixed-length episodes plus the task condition.
struct TrajectoryDataset {
  int task_id = 0;
  Eigen::VectorXf condition;
  int d_s = 0, d_a = 0, L = 0;
  std::vector<Episode> episodes;

  double mean_episode_return() const {
    double total = 0.0;
    for (const auto& e : episodes) total += e.rewards.cast<double>().sum();
    return episodes.empty() ? 0.0 : total / static_cast<double>(episodes.size());
  }
};

// One diffusion data point: [T_e, d_s + d_a], state columns then actions.
struct SequenceWindow {
  Eigen::MatrixXf m;
  int source_task = 0;
};

// Non-overlapping windows at offsets 0, T_e, 2*T_e, ... plus one
// right-aligned window covering the tail, so no transition is lost.
inline std::vector<SequenceWindow> split_windows(const TrajectoryDataset& traj, int t_e) {
  if (traj.L < t_e)
    throw std::invalid_argument("split_windows: episode length " + std::to_string(traj.L) +
                                " shorter than window " + std::to_string(t_e));
  std::vector<int> offsets;
  for (int off = 0; off + t_e <= traj.L; off += t_e) offsets.push_back(off);
  if (traj.L % t_e != 0) offsets.push_back(traj.L - t_e);
  std::vector<SequenceWindow> out;
  out.reserve(traj.episodes.size() * offsets.size());
  const int c = traj.d_s + traj.d_a;
  for (const auto& ep : traj.episodes) {
    for (int off : offsets) {
      SequenceWindow w;
      w.source_task = traj.task_id;
      w.m.resize(t_e, c);
      w.m.leftCols(traj.d_s) = ep.states.middleRows(off, t_e);
      w.m.rightCols(traj.d_a) = ep.actions.middleRows(off, t_e);
      out.push_back(std::move(w));
    }
  }
  return out;
}

// Per-column standardization with a floored deviation so constant columns
// map to zero instead of blowing up.
struct GaussianNormalizer {
  Eigen::ArrayXf mean;
  Eigen::ArrayXf std;

  static GaussianNormalizer fit(const std::vector<SequenceWindow>& windows,
                                float std_floor = 1e-6f) {
    if (windows.empty()) throw std::invalid_argument("fit_normalizer: no windows");
    const int c = static_cast<int>(windows.front().m.cols());
    Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(c), sum_sq = Eigen::ArrayXd::Zero(c);
    std::int64_t n = 0;
    for (const auto& w : windows) {
      for (int j = 0; j < c; ++j) {
        sum(j) += w.m.col(j).array().cast<double>().sum();
        sum_sq(j) += w.m.col(j).array().cast<double>().square().sum();
      }
      n += w.m.rows();
    }
    GaussianNormalizer g;
    g.mean = (sum / static_cast<double>(n)).cast<float>();
    Eigen::ArrayXd var = sum_sq / static_cast<double>(n) -
                         (sum / static_cast<double>(n)).square();
    g.std = var.max(0.0).sqrt().cast<float>().max(std_floor);
    return g;
  }

  Eigen::MatrixXf normalize(const Eigen::MatrixXf& m) const {
    Eigen::MatrixXf out = m;
    for (int j = 0; j < m.cols(); ++j) out.col(j) = (m.col(j).array() - mean(j)) / std(j);
    return out;
  }

  Eigen::MatrixXf denormalize(const Eigen::MatrixXf& m) const {
    Eigen::MatrixXf out = m;
    for (int j = 0; j < m.cols(); ++j) out.col(j) = m.col(j).array() * std(j) + mean(j);
    return out;
  }

  // column slices for receding-horizon evaluation
  Eigen::VectorXf normalize_state(const Eigen::VectorXf& s) const {
    Eigen::VectorXf out(s.size());
    for (int j = 0; j < s.size(); ++j) out(j) = (s(j) - mean(j)) / std(j);
    return out;
  }
  Eigen::VectorXf denormalize_action(const Eigen::VectorXf& a, int d_s) const {
    Eigen::VectorXf out(a.size());
    for (int j = 0; j < a.size(); ++j) out(j) = a(j) * std(d_s + j) + mean(d_s + j);
    return out;
  }
};

// Frozen subsample of a finished task's normalized windows.
struct RehearsalBuffer {
  int task_id = 0;
  Eigen::VectorXf condition;
  std::vector<SequenceWindow> windows;
  std::uint64_t seed = 0;
};

inline RehearsalBuffer build_rehearsal(const std::vector<SequenceWindow>& windows, double xi,
                                       std::uint64_t seed, int task_id,
                                       const Eigen::VectorXf& condition) {
  if (!(xi > 0.0 && xi <= 1.0))
    throw std::invalid_argument("build_rehearsal: xi must be in (0,1], got " + std::to_string(xi));
  if (windows.empty()) throw std::invalid_argument("build_rehearsal: no windows");
  const std::size_t n = windows.size();
  const std::size_t keep =
      static_cast<std::size_t>(std::ceil(xi * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  // partial Fisher-Yates: uniform sample without replacement
  for (std::size_t i = 0; i < keep; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  RehearsalBuffer buf;
  buf.task_id = task_id;
  buf.condition = condition;
  buf.seed = seed;
  buf.windows.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) buf.windows.push_back(windows[idx[i]]);
  return buf;
}

struct Batch {
  Tensor<float> windows;     // [b, T_e, C]
  Tensor<float> conditions;  // [b, cond_dim]
};

// Uniform draws with replacement; every condition row equals the source
// task's condition.
inline Batch sample_batch(const std::vector<SequenceWindow>& src,
                          const Eigen::VectorXf& condition, int b, Rng& rng) {
  if (src.empty()) throw std::invalid_argument("sample_batch: empty source");
  const int t_e = static_cast<int>(src.front().m.rows());
  const int c = static_cast<int>(src.front().m.cols());
  Batch batch{Tensor<float>({b, t_e, c}),
              Tensor<float>({b, static_cast<int>(condition.size())})};
  std::uniform_int_distribution<std::size_t> pick(0, src.size() - 1);
  for (int i = 0; i < b; ++i) {
    const Eigen::MatrixXf& w = src[pick(rng)].m;
    for (int t = 0; t < t_e; ++t)
      for (int j = 0; j < c; ++j) batch.windows.at3(i, t, j) = w(t, j);
    for (int j = 0; j < condition.size(); ++j) batch.conditions.at2(i, j) = condition(j);
  }
  return batch;
}

inline Batch sample_batch(const RehearsalBuffer& buf, int b, Rng& rng) {
  return sample_batch(buf.windows, buf.condition, b, rng);
}

// Observation corruption for the noisy-dataset experiments:
// s <- s + clip(eta * g, -rho, rho) with standard normal g.
inline TrajectoryDataset corrupt_observations(const TrajectoryDataset& traj, double eta,
                                              double rho, std::uint64_t seed) {
  if (eta < 0.0) throw std::invalid_argument("corrupt_observations: eta must be >= 0");
  if (!(rho > 0.0)) throw std::invalid_argument("corrupt_observations: rho must be > 0");
  if (eta == 0.0) return traj;
  TrajectoryDataset out = traj;
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& ep : out.episodes)
    for (int t = 0; t < ep.states.rows(); ++t)
      for (int j = 0; j < ep.states.cols(); ++j) {
        const double delta = std::clamp(eta * dist(rng), -rho, rho);
        ep.states(t, j) += static_cast<float>(delta);
      }
  return out;
}

}  // namespace cod
