#ifndef PNET_OPTIMIZER_HPP
#define PNET_OPTIMIZER_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "pnet/network.hpp"
#include "pnet/tensor.hpp"

namespace pnet {

// RMSProp with running mean square
//   MS <- 0.9 MS + 0.1 g^2
//   w  <- w - eps * g / (sqrt(MS) + mu)
// MS buffers start at zero and are keyed by parameter name.
template <typename S>
struct RmsPropStateT {
  double mu = 1e-6;
  std::unordered_map<std::string, TensorT<S>> mean_square;
};

using RmsPropState = RmsPropStateT<float>;

template <typename S>
void rmsprop_step(ParameterStoreT<S>& params, RmsPropStateT<S>& state, double lr) {
  for (auto& e : params.entries()) {
    auto [it, fresh] = state.mean_square.try_emplace(e.name, e.value.shape());
    TensorT<S>& ms = it->second;
    if (!fresh && ms.shape() != e.value.shape()) {
      throw UsageError("rmsprop_step: stale state for '" + e.name + "'");
    }
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const S g = e.grad[i];
      ms[i] = static_cast<S>(0.9) * ms[i] + static_cast<S>(0.1) * g * g;
      e.value[i] -= static_cast<S>(lr) * g /
                    (std::sqrt(ms[i]) + static_cast<S>(state.mu));
    }
  }
  params.zero_grads();
}

// Plain SGD, the comparison baseline: w <- w - lr * g.
template <typename S>
void sgd_step(ParameterStoreT<S>& params, double lr) {
  for (auto& e : params.entries()) {
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      e.value[i] -= static_cast<S>(lr) * e.grad[i];
    }
  }
  params.zero_grads();
}

// L2 shrink applied to weights only; biases are left alone. Folded into
// the gradient before the optimizer step.
template <typename S>
void apply_weight_decay(ParameterStoreT<S>& params, double decay) {
  if (decay == 0.0) return;
  for (auto& e : params.entries()) {
    if (e.name.ends_with(".bias")) continue;
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      e.grad[i] += static_cast<S>(decay) * e.value[i];
    }
  }
}

// Plateau schedule: the rate drops by drop_factor once `patience`
// consecutive validation checks fail to improve on the best accuracy
// seen, floored at min_rate. A drop requested at the floor sets
// `exhausted`, the training loop's stop signal.
struct LrSchedule {
  double rate = 0.05;
  double drop_factor = 10.0;
  std::size_t patience = 3;
  double min_rate = 1e-8;

  double best = -std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  bool exhausted = false;

  void observe(double validation_accuracy) {
    if (validation_accuracy > best) {
      best = validation_accuracy;
      stale = 0;
      return;
    }
    if (++stale >= patience) {
      stale = 0;
      if (rate <= min_rate) {
        exhausted = true;
        return;
      }
      rate = std::max(rate / drop_factor, min_rate);
    }
  }
};

}  // namespace pnet

#endif
