#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

namespace cod {

// Normalized scores p_i(step) on a shared checkpoint grid. The grid must
// cover every task boundary j * delta for j in 0..I so the metric suite can
// read its endpoints.
struct ContinualLog {
  int task_count = 0;
  long delta = 0;
  std::vector<long> steps;              // ascending
  std::vector<std::vector<double>> p;   // p[grid][task]

  void add(long step, const std::vector<double>& scores) {
    if (static_cast<int>(scores.size()) != task_count)
      throw std::invalid_argument("continual log: expected " + std::to_string(task_count) +
                                  " scores, got " + std::to_string(scores.size()));
    if (!steps.empty() && step <= steps.back())
      throw std::invalid_argument("continual log: steps must be added in increasing order");
    steps.push_back(step);
    p.push_back(scores);
  }

  double at(int task, long step) const {
    auto it = std::lower_bound(steps.begin(), steps.end(), step);
    if (it == steps.end() || *it != step)
      throw std::invalid_argument("continual log: missing checkpoint at step " +
                                  std::to_string(step));
    return p[static_cast<std::size_t>(it - steps.begin())][static_cast<std::size_t>(task)];
  }

  bool has_full_grid() const {
    for (int j = 0; j <= task_count; ++j) {
      auto it = std::lower_bound(steps.begin(), steps.end(), j * delta);
      if (it == steps.end() || *it != j * delta) return false;
    }
    return true;
  }
};

struct MetricReport {
  double P = 0.0;
  double FT = 0.0;
  double F = 0.0;
  double combined = 0.0;  // P + FT - F
  std::vector<double> ft_per_task;
  std::vector<double> f_per_task;
};

// P: mean final score. FT_i: AUC against the constant-0.5 reference, from
// the two endpoints of task i's own training phase. F_i: drop from the end
// of task i's phase to the end of the run.
inline MetricReport compute_metrics(const ContinualLog& log) {
  if (log.task_count < 1 || log.delta < 1)
    throw std::invalid_argument("compute_metrics: empty log");
  const int I = log.task_count;
  const long d = log.delta;
  MetricReport r;
  for (int i = 0; i < I; ++i) {
    const double start = log.at(i, static_cast<long>(i) * d);
    const double end_own = log.at(i, static_cast<long>(i + 1) * d);
    const double end_run = log.at(i, static_cast<long>(I) * d);
    const double auc = 0.5 * (start + end_own);
    r.ft_per_task.push_back((auc - 0.5) / (1.0 - 0.5));
    r.f_per_task.push_back(end_own - end_run);
    r.P += end_run;
    r.FT += r.ft_per_task.back();
    r.F += r.f_per_task.back();
  }
  r.P /= I;
  r.FT /= I;
  r.F /= I;
  r.combined = r.P + r.FT - r.F;
  return r;
}

// Episode returns -> normalized score against a pinned expert reference.
inline double score_from_returns(const std::vector<double>& returns, double reference_return) {
  if (returns.empty()) throw std::invalid_argument("score: no episodes");
  if (!(reference_return > 0.0))
    throw std::invalid_argument("score: reference return must be positive");
  double mean = 0.0;
  for (double v : returns) mean += v;
  mean /= static_cast<double>(returns.size());
  return std::clamp(mean / reference_return, 0.0, 1.0);
}

}  // namespace cod
