#pragma once

#include <Eigen/Dense>

#include <vector>

namespace cod {

// Variance schedule for the diffusion chain, 1-based in k like the math:
// beta_at(k), alpha_at(k), posterior_var_at(k) for k in [1,K];
// alpha_bar_at(k) for k in [0,K] with alpha_bar_at(0) == 1 so the k=1
// reverse step is exact and noiseless.
struct NoiseSchedule {
  int K = 0;
  Eigen::ArrayXd beta;           // [K]
  Eigen::ArrayXd alpha;          // [K]
  Eigen::ArrayXd alpha_bar;      // [K+1]
  Eigen::ArrayXd posterior_var;  // [K]

  double beta_at(int k) const { return beta(k - 1); }
  double alpha_at(int k) const { return alpha(k - 1); }
  double alpha_bar_at(int k) const { return alpha_bar(k); }
  double posterior_var_at(int k) const { return posterior_var(k - 1); }

  void check_step(int k) const;  // throws unless 1 <= k <= K
  void validate() const;         // verifies the derived-table identities
};

NoiseSchedule linear_schedule(int K, double beta_min = 1e-4, double beta_max = 0.02);

// Descending step indices from K to 0 in decrements of `stride`, always
// terminated by 0; adjacent pairs are the reverse transitions to run.
std::vector<int> ddim_subsequence(int K, int stride);

}  // namespace cod
