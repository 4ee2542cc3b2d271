#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "gcnn/conv.hpp"

namespace gcnn {

/// Parameter gradients of a network, one entry per conv layer in declaration order.
template <typename T>
using NetGrads = std::vector<ConvGrads<T>>;

template <typename T>
NetGrads<T> zero_grads(const std::vector<const ConvLayer<T>*>& layers) {
  NetGrads<T> g;
  g.reserve(layers.size());
  for (const auto* l : layers) g.push_back(ConvGrads<T>::zeros_like(*l));
  return g;
}

template <typename T>
void scale_grads(NetGrads<T>& g, T s) {
  for (auto& lg : g) {
    for (std::size_t i = 0; i < lg.weights.size(); ++i) lg.weights[i] *= s;
    for (auto& b : lg.bias) b *= s;
  }
}

/// He-normal weights, zero bias.
template <typename T>
void he_init(ConvLayer<T>& l, std::mt19937_64& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(l.patch_size()));
  std::normal_distribution<double> dist(0.0, stddev);
  for (std::size_t i = 0; i < l.weights.size(); ++i) l.weights[i] = static_cast<T>(dist(rng));
  std::fill(l.bias.begin(), l.bias.end(), T(0));
}

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

/// SGD with momentum (velocity = momentum * velocity + lr * grad; w -= velocity).
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(const std::vector<ConvLayer<T>*>& layers, SgdConfig cfg) : layers_(layers), cfg_(cfg) {
    for (auto* l : layers_) {
      vel_w_.emplace_back(l->weights.size(), T(0));
      vel_b_.emplace_back(l->bias.size(), T(0));
    }
  }

  void step(const NetGrads<T>& g, double lr) {
    const T mu = static_cast<T>(cfg_.momentum);
    const T rate = static_cast<T>(lr);
    const T wd = static_cast<T>(cfg_.weight_decay);
    for (std::size_t li = 0; li < layers_.size(); ++li) {
      auto& l = *layers_[li];
      for (std::size_t i = 0; i < l.weights.size(); ++i) {
        vel_w_[li][i] = mu * vel_w_[li][i] + rate * (g[li].weights[i] + wd * l.weights[i]);
        l.weights[i] -= vel_w_[li][i];
      }
      for (std::size_t i = 0; i < l.bias.size(); ++i) {
        vel_b_[li][i] = mu * vel_b_[li][i] + rate * g[li].bias[i];
        l.bias[i] -= vel_b_[li][i];
      }
    }
  }

  const SgdConfig& config() const { return cfg_; }

 private:
  std::vector<ConvLayer<T>*> layers_;
  SgdConfig cfg_;
  std::vector<std::vector<T>> vel_w_, vel_b_;
};

/// Multi-step schedule: base rate, x0.1 once `decay_at` of the steps are done.
inline double step_lr(double base, std::size_t step, std::size_t total, double decay_at = 2.0 / 3.0) {
  return static_cast<double>(step) >= decay_at * static_cast<double>(total) ? base * 0.1 : base;
}

/// Sums per-item gradients in item order, so the result does not depend on
/// which thread computed which item.
template <typename T>
NetGrads<T> reduce_in_order(std::vector<NetGrads<T>>& parts) {
  NetGrads<T> total = std::move(parts.front());
  for (std::size_t i = 1; i < parts.size(); ++i)
    for (std::size_t l = 0; l < total.size(); ++l) total[l].add(parts[i][l]);
  return total;
}

}  // namespace gcnn
