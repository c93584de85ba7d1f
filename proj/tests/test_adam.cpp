#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tse/nn/adam.hpp"
#include "tse/nn/model.hpp"
#include "tse/random.hpp"

using namespace tse;
using namespace tse::nn;

namespace {

const WaveParams kWaves{100.0, 60.0, 18.0};

/// Gradients filled with nonzero values everywhere, including slots the mask
/// forbids; the optimizer must keep those slots pinned at zero anyway.
template <typename T>
ParamGrads<T> hostile_grads(const ConvModel<T>& model, std::uint64_t seed) {
  auto g = ParamGrads<T>::zeros_like(model);
  RngEngine rng(seed);
  for (auto& layer : g.w)
    for (auto& v : layer) v = static_cast<T>(uniform(rng, -1.0, 1.0));
  for (auto& layer : g.b)
    for (auto& v : layer) v = static_cast<T>(uniform(rng, -1.0, 1.0));
  return g;
}

} // namespace

TEST_CASE("masked weights and their moments stay exactly zero") {
  auto model =
      make_model<double>(ModelArch{}, KernelKind::anisotropic, kWaves, 10.0, 1.0, 128.0, 3);
  auto opt = AdamState<double>::init(model);

  for (int step = 0; step < 100; ++step)
    adam_project_step(model, hostile_grads(model, 100 + step), opt);

  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    std::size_t kernel = static_cast<std::size_t>(layer.kh) * layer.kw;
    for (std::size_t idx = 0; idx < layer.weights.size(); ++idx) {
      std::size_t cell = idx % kernel;
      int u = static_cast<int>(cell) / layer.kw;
      int v = static_cast<int>(cell) % layer.kw;
      if (layer.mask.at(u - layer.kh / 2, v - layer.kw / 2)) continue;
      CHECK(layer.weights[idx] == 0.0);
      CHECK(opt.m_w[l][idx] == 0.0);
      CHECK(opt.v_w[l][idx] == 0.0);
    }
  }
}

TEST_CASE("active weights actually move") {
  auto model =
      make_model<double>(ModelArch{}, KernelKind::anisotropic, kWaves, 10.0, 1.0, 128.0, 5);
  auto before = model.layers[0].weights;
  auto opt = AdamState<double>::init(model);
  adam_project_step(model, hostile_grads(model, 7), opt);

  const auto& layer = model.layers[0];
  int moved = 0;
  for (std::size_t idx = 0; idx < layer.weights.size(); ++idx)
    if (layer.weights[idx] != before[idx]) ++moved;
  CHECK(moved == static_cast<int>(layer.support.size()) * layer.c_in * layer.c_out);
}

TEST_CASE("first step is close to lr times the gradient sign") {
  // With zero moments, the bias-corrected first update is
  // -lr * g / (|g| + eps_hat), i.e. about -lr * sign(g).
  auto model =
      make_model<double>(ModelArch{}, KernelKind::isotropic, kWaves, 10.0, 1.0, 128.0, 9);
  AdamConfig<double> cfg;
  cfg.lr = 1e-3;
  auto opt = AdamState<double>::init(model, cfg);

  auto g = ParamGrads<double>::zeros_like(model);
  g.w[0][0] = 0.25;
  g.w[0][1] = -3.0;
  g.b[0][0] = 1.0;
  auto before_w0 = model.layers[0].weights[0];
  auto before_w1 = model.layers[0].weights[1];
  auto before_b = model.layers[0].bias[0];
  adam_project_step(model, g, opt);

  CHECK(model.layers[0].weights[0] ==
        doctest::Approx(before_w0 - 1e-3).epsilon(1e-6));
  CHECK(model.layers[0].weights[1] ==
        doctest::Approx(before_w1 + 1e-3).epsilon(1e-6));
  CHECK(model.layers[0].bias[0] == doctest::Approx(before_b - 1e-3).epsilon(1e-6));
  // Untouched parameters stay put.
  CHECK(model.layers[0].weights[2] != 0.0);
  CHECK(opt.step == 1);
}

TEST_CASE("optimizer trajectory is deterministic") {
  auto run = [] {
    auto model =
        make_model<float>(ModelArch{}, KernelKind::anisotropic, kWaves, 10.0, 1.0, 128.0, 21);
    auto opt = AdamState<float>::init(model);
    for (int step = 0; step < 20; ++step)
      adam_project_step(model, hostile_grads(model, 500 + step), opt);
    return model;
  };
  auto a = run();
  auto b = run();
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    CHECK(a.layers[l].weights == b.layers[l].weights);
    CHECK(a.layers[l].bias == b.layers[l].bias);
  }
}

TEST_CASE("moment decay follows the configured betas") {
  auto model =
      make_model<double>(ModelArch{}, KernelKind::isotropic, kWaves, 10.0, 1.0, 128.0, 31);
  auto opt = AdamState<double>::init(model);

  auto g = ParamGrads<double>::zeros_like(model);
  g.w[0][0] = 2.0;
  adam_project_step(model, g, opt);
  CHECK(opt.m_w[0][0] == doctest::Approx((1.0 - 0.9) * 2.0).epsilon(1e-12));
  CHECK(opt.v_w[0][0] == doctest::Approx((1.0 - 0.999) * 4.0).epsilon(1e-12));

  g.w[0][0] = 0.0;
  adam_project_step(model, g, opt);
  CHECK(opt.m_w[0][0] == doctest::Approx(0.9 * 0.1 * 2.0).epsilon(1e-12));
  CHECK(opt.v_w[0][0] == doctest::Approx(0.999 * 0.001 * 4.0).epsilon(1e-12));
}
