#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vncseg/nn/layers.hpp"

namespace vncseg {

struct TrainConfig {
  int iterations = 10000;
  int batch_size = 32;
  double lr0 = 0.001;
  double decay_factor = 0.3;
  int decay_every = 2000;
  int n_folds = 6;
  std::uint64_t seed = 0;
  double dice_eps = 1e-5;
  double val_fraction = 0.2;

  void validate() const {
    if (iterations < 1) throw std::runtime_error("iterations must be >= 1");
    if (batch_size < 1) throw std::runtime_error("batch size must be >= 1");
    if (!(lr0 > 0.0)) throw std::runtime_error("lr0 must be positive");
    if (!(decay_factor > 0.0) || decay_factor > 1.0)
      throw std::runtime_error("decay factor must be in (0, 1]");
    if (decay_every < 1) throw std::runtime_error("decay interval must be >= 1");
    if (n_folds < 2) throw std::runtime_error("fold count must be >= 2");
    if (!(dice_eps > 0.0)) throw std::runtime_error("dice eps must be positive");
    if (!(val_fraction >= 0.0) || val_fraction >= 1.0)
      throw std::runtime_error("validation fraction must be in [0, 1)");
  }
};

// Stepwise decay: lr(i) = lr0 * decay_factor^floor(i / decay_every)
inline double learning_rate(int iteration, const TrainConfig& cfg) {
  return cfg.lr0 * std::pow(cfg.decay_factor, iteration / cfg.decay_every);
}

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  long t = 0;

  template <typename P>
  static AdamState like(const std::vector<P>& params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const auto& p : params) {
      s.m.emplace_back(p.value->data.size(), T(0));
      s.v.emplace_back(p.value->data.size(), T(0));
    }
    return s;
  }
};

// One bias-corrected update: theta -= lr * mhat / (sqrt(vhat) + eps)
template <typename T>
void adam_step(const std::vector<ParamRef<T>>& params, AdamState<T>& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  if (state.m.size() != params.size())
    throw std::runtime_error("optimizer state tracks " + std::to_string(state.m.size()) +
                             " tensors, model has " + std::to_string(params.size()));
  ++state.t;
  T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
  T bc1 = static_cast<T>(1.0 - std::pow(beta1, static_cast<double>(state.t)));
  T bc2 = static_cast<T>(1.0 - std::pow(beta2, static_cast<double>(state.t)));
  T lrT = static_cast<T>(lr), epsT = static_cast<T>(eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* w = params[i].value->data.data();
    const T* g = params[i].grad->data.data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    std::size_t n = params[i].value->data.size();
    if (state.m[i].size() != n)
      throw std::runtime_error("optimizer state size mismatch for " + params[i].name);
    for (std::size_t k = 0; k < n; ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      T mhat = m[k] / bc1;
      T vhat = v[k] / bc2;
      w[k] -= lrT * mhat / (std::sqrt(vhat) + epsT);
    }
  }
}

}  // namespace vncseg
