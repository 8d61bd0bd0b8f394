#pragma once

#include "cod/schedule.hpp"
#include "cod/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace cod {

template <typename T>
struct GuidanceConfig {
  T omega = T(1.2);
  bool use_cfg = true;
};

template <typename T>
struct GenerationRequest {
  std::vector<T> first_state;  // normalized units, d_s entries
  std::vector<T> condition;
  int stride = 10;
  std::uint64_t seed = 0;
};

// Noise-predictor handle: tau [B,T_e,C], per-sample step indices, raw
// conditions [B,cond_dim], and a per-sample null-condition mask.
template <typename T>
struct NoiseModel {
  int seq_len = 0;
  int channels = 0;
  int state_dim = 0;
  std::function<Tensor<T>(const Tensor<T>&, const std::vector<int>&, const Tensor<T>&,
                          const std::vector<char>&)>
      predict;
};

template <typename T>
Tensor<T> forward_noise(const Tensor<T>& tau0, int k, const Tensor<T>& eps,
                        const NoiseSchedule& sched) {
  sched.check_step(k);
  if (eps.shape != tau0.shape)
    throw std::invalid_argument("forward_noise: noise shape " + shape_str(eps.shape) +
                                " != sample shape " + shape_str(tau0.shape));
  const T a = static_cast<T>(std::sqrt(sched.alpha_bar_at(k)));
  const T b = static_cast<T>(std::sqrt(1.0 - sched.alpha_bar_at(k)));
  Tensor<T> out;
  out.shape = tau0.shape;
  out.data = a * tau0.data + b * eps.data;
  return out;
}

template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& eps_uncond, const Tensor<T>& eps_cond, T omega) {
  if (eps_uncond.shape != eps_cond.shape)
    throw std::invalid_argument("cfg_combine: shape mismatch " + shape_str(eps_uncond.shape) +
                                " vs " + shape_str(eps_cond.shape));
  Tensor<T> out;
  out.shape = eps_uncond.shape;
  out.data = eps_uncond.data + omega * (eps_cond.data - eps_uncond.data);
  return out;
}

// One stochastic reverse transition k -> k-1. Caller passes z = 0 at k = 1;
// the injected noise is sqrt(posterior variance) * z either way, which is
// exactly zero at k = 1.
template <typename T>
Tensor<T> ddpm_reverse_step(const Tensor<T>& tau_k, const Tensor<T>& eps_bar, int k,
                            const NoiseSchedule& sched, const Tensor<T>& z) {
  sched.check_step(k);
  if (eps_bar.shape != tau_k.shape || z.shape != tau_k.shape)
    throw std::invalid_argument("ddpm_reverse_step: shape mismatch");
  const double ab_k = sched.alpha_bar_at(k);
  const double ab_prev = sched.alpha_bar_at(k - 1);
  const double beta_k = sched.beta_at(k);
  const double alpha_k = sched.alpha_at(k);
  const T denoise_a = static_cast<T>(1.0 / std::sqrt(ab_k));
  const T denoise_b = static_cast<T>(std::sqrt(1.0 - ab_k) / std::sqrt(ab_k));
  const T c_tau0 = static_cast<T>(std::sqrt(ab_prev) * beta_k / (1.0 - ab_k));
  const T c_tauk = static_cast<T>(std::sqrt(alpha_k) * (1.0 - ab_prev) / (1.0 - ab_k));
  const T sigma = static_cast<T>(std::sqrt(sched.posterior_var_at(k)));
  Tensor<T> out;
  out.shape = tau_k.shape;
  // tau_bar is the model's tau^0 estimate from the predicted noise.
  out.data = c_tau0 * (denoise_a * tau_k.data - denoise_b * eps_bar.data) +
             c_tauk * tau_k.data + sigma * z.data;
  return out;
}

// Deterministic (eta = 0) strided jump k -> k_prev.
template <typename T>
Tensor<T> ddim_step(const Tensor<T>& tau_k, const Tensor<T>& eps_bar, int k, int k_prev,
                    const NoiseSchedule& sched) {
  sched.check_step(k);
  if (k_prev < 0 || k_prev >= k)
    throw std::invalid_argument("ddim_step: need 0 <= k_prev < k, got k_prev=" +
                                std::to_string(k_prev) + " k=" + std::to_string(k));
  if (eps_bar.shape != tau_k.shape)
    throw std::invalid_argument("ddim_step: shape mismatch");
  const double ab_k = sched.alpha_bar_at(k);
  const double ab_prev = sched.alpha_bar_at(k_prev);
  const T denoise_a = static_cast<T>(1.0 / std::sqrt(ab_k));
  const T denoise_b = static_cast<T>(std::sqrt(1.0 - ab_k) / std::sqrt(ab_k));
  const T c0 = static_cast<T>(std::sqrt(ab_prev));
  const T c1 = static_cast<T>(std::sqrt(1.0 - ab_prev));
  Tensor<T> out;
  out.shape = tau_k.shape;
  out.data = c0 * (denoise_a * tau_k.data - denoise_b * eps_bar.data) + c1 * eps_bar.data;
  return out;
}

namespace detail {

template <typename T>
void inpaint_first_states(Tensor<T>& tau, const std::vector<std::vector<T>>& first_states) {
  const int B = tau.dim(0);
  for (int b = 0; b < B; ++b) {
    const auto& s = first_states[static_cast<std::size_t>(b)];
    for (std::size_t i = 0; i < s.size(); ++i) tau.at3(b, 0, static_cast<int>(i)) = s[i];
  }
}

}  // namespace detail

// Receding-horizon window generation for a batch of observations sharing one
// schedule/guidance setup. Conditions are per-row; the observed first state
// is re-imposed around every reverse transition. stride == 1 runs the full
// stochastic chain, stride > 1 the deterministic strided one.
template <typename T>
Tensor<T> generate_batch(const NoiseModel<T>& model,
                         const std::vector<std::vector<T>>& first_states, const Tensor<T>& conds,
                         int stride, const NoiseSchedule& sched, const GuidanceConfig<T>& guidance,
                         Rng& rng) {
  const int B = static_cast<int>(first_states.size());
  if (conds.dim(0) != B)
    throw std::invalid_argument("generate: condition rows " + std::to_string(conds.dim(0)) +
                                " != batch " + std::to_string(B));
  for (const auto& s : first_states)
    if (static_cast<int>(s.size()) != model.state_dim)
      throw std::invalid_argument("generate: first state dimension " + std::to_string(s.size()) +
                                  " != d_s " + std::to_string(model.state_dim));
  const std::vector<char> keep(static_cast<std::size_t>(B), 0);

  // conditional and null-condition queries ride in one stacked batch
  std::vector<char> cfg_mask(static_cast<std::size_t>(2 * B), 0);
  Tensor<T> cfg_conds({2 * B, conds.dim(1)});
  for (int b = 0; b < B; ++b) {
    cfg_mask[static_cast<std::size_t>(B + b)] = 1;
    for (int j = 0; j < conds.dim(1); ++j) {
      cfg_conds.at2(b, j) = conds.at2(b, j);
      cfg_conds.at2(B + b, j) = conds.at2(b, j);
    }
  }

  Tensor<T> tau = randn<T>({B, model.seq_len, model.channels}, rng);
  detail::inpaint_first_states(tau, first_states);
  const std::vector<int> steps = ddim_subsequence(sched.K, stride);
  const std::int64_t per_sample = static_cast<std::int64_t>(model.seq_len) * model.channels;
  for (std::size_t i = 0; i + 1 < steps.size(); ++i) {
    const int k = steps[i];
    const int k_prev = steps[i + 1];
    Tensor<T> eps_bar;
    if (guidance.use_cfg) {
      Tensor<T> stacked({2 * B, model.seq_len, model.channels});
      stacked.data.segment(0, B * per_sample) = tau.data;
      stacked.data.segment(B * per_sample, B * per_sample) = tau.data;
      const std::vector<int> kvec(static_cast<std::size_t>(2 * B), k);
      Tensor<T> eps_all = model.predict(stacked, kvec, cfg_conds, cfg_mask);
      Tensor<T> eps_cond({B, model.seq_len, model.channels});
      Tensor<T> eps_uncond({B, model.seq_len, model.channels});
      eps_cond.data = eps_all.data.segment(0, B * per_sample);
      eps_uncond.data = eps_all.data.segment(B * per_sample, B * per_sample);
      eps_bar = cfg_combine(eps_uncond, eps_cond, guidance.omega);
    } else {
      const std::vector<int> kvec(static_cast<std::size_t>(B), k);
      eps_bar = model.predict(tau, kvec, conds, keep);
    }
    if (stride == 1) {
      Tensor<T> z = k > 1 ? randn<T>(tau.shape, rng) : Tensor<T>::zeros(tau.shape);
      tau = ddpm_reverse_step(tau, eps_bar, k, sched, z);
    } else {
      tau = ddim_step(tau, eps_bar, k, k_prev, sched);
    }
    detail::inpaint_first_states(tau, first_states);
  }
  return tau;
}

// Single-window form; returns [T_e, C].
template <typename T>
Tensor<T> generate(const NoiseModel<T>& model, const GenerationRequest<T>& req,
                   const NoiseSchedule& sched, const GuidanceConfig<T>& guidance) {
  Rng rng(req.seed);
  Tensor<T> conds({1, static_cast<int>(req.condition.size())});
  for (std::size_t i = 0; i < req.condition.size(); ++i) conds.at(static_cast<std::int64_t>(i)) = req.condition[i];
  Tensor<T> out = generate_batch(model, {req.first_state}, conds, req.stride, sched, guidance, rng);
  return out.reshaped({model.seq_len, model.channels});
}

}  // namespace cod
