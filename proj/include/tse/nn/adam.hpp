#pragma once

#include <cmath>
#include <vector>

#include "tse/nn/model.hpp"

namespace tse::nn {

template <typename T>
struct AdamConfig {
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

/// First/second moment estimates mirroring the model's parameter layout.
template <typename T>
struct AdamState {
  AdamConfig<T> config;
  long step = 0;
  std::vector<std::vector<T>> m_w, v_w, m_b, v_b;

  static AdamState init(const ConvModel<T>& model, const AdamConfig<T>& config = {}) {
    AdamState st;
    st.config = config;
    for (const auto& layer : model.layers) {
      st.m_w.emplace_back(layer.weight_count(), T(0));
      st.v_w.emplace_back(layer.weight_count(), T(0));
      st.m_b.emplace_back(layer.bias.size(), T(0));
      st.v_b.emplace_back(layer.bias.size(), T(0));
    }
    return st;
  }
};

namespace detail {

template <typename T>
void adam_update_span(T* theta, T* m, T* v, const T* g, std::size_t n, AdamConfig<T> cfg,
                      T bias1, T bias2) {
  for (std::size_t k = 0; k < n; ++k) {
    m[k] = cfg.beta1 * m[k] + (T(1) - cfg.beta1) * g[k];
    v[k] = cfg.beta2 * v[k] + (T(1) - cfg.beta2) * g[k] * g[k];
    T m_hat = m[k] / bias1;
    T v_hat = v[k] / bias2;
    theta[k] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

} // namespace detail

/// One Adam step followed by projection onto the mask constraint: weights
/// on inactive kernel cells are reset to exactly zero and their moment
/// estimates are cleared, so a masked coordinate can never accumulate
/// history regardless of what the supplied gradients contain.
template <typename T>
void adam_project_step(ConvModel<T>& model, const ParamGrads<T>& grads, AdamState<T>& state) {
  ++state.step;
  const auto& cfg = state.config;
  T bias1 = T(1) - std::pow(cfg.beta1, static_cast<T>(state.step));
  T bias2 = T(1) - std::pow(cfg.beta2, static_cast<T>(state.step));
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& layer = model.layers[l];
    detail::adam_update_span(layer.weights.data(), state.m_w[l].data(), state.v_w[l].data(),
                             grads.w[l].data(), layer.weights.size(), cfg, bias1, bias2);
    detail::adam_update_span(layer.bias.data(), state.m_b[l].data(), state.v_b[l].data(),
                             grads.b[l].data(), layer.bias.size(), cfg, bias1, bias2);
    const int kk = layer.kh * layer.kw;
    for (int o = 0; o < layer.c_out; ++o) {
      for (int ci = 0; ci < layer.c_in; ++ci) {
        std::size_t base = (static_cast<std::size_t>(o) * layer.c_in + ci) * kk;
        for (int cell = 0; cell < kk; ++cell) {
          if (layer.mask.cells[cell]) continue;
          layer.weights[base + cell] = T(0);
          state.m_w[l][base + cell] = T(0);
          state.v_w[l][base + cell] = T(0);
        }
      }
    }
  }
}

} // namespace tse::nn
