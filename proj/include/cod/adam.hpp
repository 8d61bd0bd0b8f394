#pragma once

#include "cod/params.hpp"
#include "cod/tensor.hpp"

#include <cmath>
#include <string>
#include <unordered_map>

namespace cod {

// Per-parameter first/second moments keyed by parameter name, one shared
// step counter. Moments are created lazily on first update of a name.
template <typename T>
struct AdamState {
  struct Moments {
    Tensor<T> m, v;
  };
  std::unordered_map<std::string, Moments> moments;
  long step = 0;
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

// One bias-corrected Adam update over the named gradients. Parameters without
// a gradient entry are left untouched.
template <typename T>
void adam_step(ParamSet<T>& params, const std::unordered_map<std::string, Tensor<T>>& grads,
               AdamState<T>& state, T lr) {
  if (!(lr > T(0))) throw std::invalid_argument("adam_step: lr must be > 0");
  state.step += 1;
  const T bc1 = T(1) - std::pow(state.beta1, static_cast<T>(state.step));
  const T bc2 = T(1) - std::pow(state.beta2, static_cast<T>(state.step));
  for (const auto& [name, g] : grads) {
    Tensor<T>& p = params[name];
    if (p.shape != g.shape)
      throw std::invalid_argument("adam_step: gradient shape " + shape_str(g.shape) +
                                  " != parameter shape " + shape_str(p.shape) + " for " + name);
    if (!g.all_finite())
      throw std::runtime_error("adam_step: non-finite gradient for parameter " + name);
    auto it = state.moments.find(name);
    if (it == state.moments.end()) {
      it = state.moments
               .emplace(name, typename AdamState<T>::Moments{Tensor<T>::zeros(p.shape),
                                                             Tensor<T>::zeros(p.shape)})
               .first;
    }
    auto& mo = it->second;
    mo.m.data = state.beta1 * mo.m.data + (T(1) - state.beta1) * g.data;
    mo.v.data = state.beta2 * mo.v.data + (T(1) - state.beta2) * g.data.square();
    p.data -= lr * (mo.m.data / bc1) / ((mo.v.data / bc2).sqrt() + state.eps);
  }
}

}  // namespace cod
