#include "cod/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cod {

void NoiseSchedule::check_step(int k) const {
  if (k < 1 || k > K)
    throw std::invalid_argument("diffusion step " + std::to_string(k) + " outside [1," +
                                std::to_string(K) + "]");
}

void NoiseSchedule::validate() const {
  if (K < 1) throw std::logic_error("schedule: K must be >= 1");
  if (alpha_bar(0) != 1.0) throw std::logic_error("schedule: alpha_bar[0] must be 1");
  for (int k = 1; k <= K; ++k) {
    if (alpha(k - 1) + beta(k - 1) != 1.0)
      throw std::logic_error("schedule: alpha+beta != 1 at k=" + std::to_string(k));
    if (!(alpha_bar(k) < alpha_bar(k - 1)))
      throw std::logic_error("schedule: alpha_bar not strictly decreasing at k=" +
                             std::to_string(k));
    const double expect = (1.0 - alpha_bar(k - 1)) / (1.0 - alpha_bar(k)) * beta(k - 1);
    if (std::abs(posterior_var(k - 1) - expect) > 1e-15)
      throw std::logic_error("schedule: posterior variance mismatch at k=" + std::to_string(k));
    if (posterior_var(k - 1) < 0.0 || posterior_var(k - 1) >= beta(k - 1))
      throw std::logic_error("schedule: posterior variance out of [0,beta) at k=" +
                             std::to_string(k));
  }
  if (posterior_var(0) != 0.0) throw std::logic_error("schedule: posterior_var[1] must be 0");
  if (!(alpha_bar(K) > 0.0)) throw std::logic_error("schedule: alpha_bar[K] must stay positive");
}

NoiseSchedule linear_schedule(int K, double beta_min, double beta_max) {
  if (K < 1) throw std::invalid_argument("linear_schedule: K must be >= 1");
  if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
    throw std::invalid_argument("linear_schedule: need 0 < beta_min <= beta_max < 1");
  NoiseSchedule s;
  s.K = K;
  s.beta.resize(K);
  if (K == 1)
    s.beta(0) = beta_min;
  else
    for (int i = 0; i < K; ++i) s.beta(i) = beta_min + (beta_max - beta_min) * i / (K - 1);
  s.alpha = 1.0 - s.beta;
  s.alpha_bar.resize(K + 1);
  s.alpha_bar(0) = 1.0;
  for (int k = 1; k <= K; ++k) s.alpha_bar(k) = s.alpha_bar(k - 1) * s.alpha(k - 1);
  s.posterior_var.resize(K);
  for (int k = 1; k <= K; ++k)
    s.posterior_var(k - 1) = (1.0 - s.alpha_bar(k - 1)) / (1.0 - s.alpha_bar(k)) * s.beta(k - 1);
  s.validate();
  return s;
}

std::vector<int> ddim_subsequence(int K, int stride) {
  if (stride < 1 || stride > K)
    throw std::invalid_argument("ddim_subsequence: stride must be in [1,K]");
  std::vector<int> steps;
  for (int k = K; k > 0; k -= stride) steps.push_back(k);
  steps.push_back(0);
  return steps;
}

}  // namespace cod
