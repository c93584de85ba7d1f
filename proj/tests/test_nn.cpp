#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tse/nn/model.hpp"
#include "tse/random.hpp"

using namespace tse;
using namespace tse::nn;

namespace {

const WaveParams kWaves{100.0, 60.0, 18.0};

template <typename T>
Tensor3<T> random_tensor(int c, int h, int w, std::uint64_t seed, double lo = 0.0,
                         double hi = 1.0) {
  Tensor3<T> t(c, h, w);
  RngEngine rng(seed);
  for (auto& v : t.data) v = static_cast<T>(uniform(rng, lo, hi));
  return t;
}

/// Plain quadruple-loop convolution used as the arithmetic reference.
template <typename T>
Tensor3<T> conv_reference(const ConvLayer<T>& layer, const Tensor3<T>& in) {
  Tensor3<T> out(layer.c_out, in.h, in.w);
  for (int o = 0; o < layer.c_out; ++o)
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        double acc = layer.bias[o];
        for (int ci = 0; ci < layer.c_in; ++ci)
          for (int u = 0; u < layer.kh; ++u)
            for (int v = 0; v < layer.kw; ++v) {
              if (!layer.mask.at(u - layer.kh / 2, v - layer.kw / 2)) continue;
              int yy = y + u - layer.kh / 2;
              int xx = x + v - layer.kw / 2;
              if (yy < 0 || yy >= in.h || xx < 0 || xx >= in.w) continue;
              acc += static_cast<double>(layer.weight(o, ci, u, v)) *
                     static_cast<double>(in.at(ci, yy, xx));
            }
        out.at(o, y, x) = static_cast<T>(acc);
      }
  return out;
}

std::filesystem::path temp_file(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "tse_test_nn";
  std::filesystem::create_directories(dir);
  return dir / name;
}

} // namespace

TEST_CASE("masked convolution matches the loop reference") {
  RngEngine rng(5);
  SUBCASE("anisotropic mask") {
    auto layer = make_conv_layer<double>(3, 4, build_anisotropic_mask(7, 7, kWaves, 10.0, 1.0), rng);
    auto in = random_tensor<double>(3, 13, 17, 21, -1.0, 1.0);
    for (int o = 0; o < 4; ++o) layer.bias[o] = 0.1 * (o + 1);
    auto got = conv2d_masked(layer, in);
    auto want = conv_reference(layer, in);
    REQUIRE(got.same_shape(want));
    for (std::size_t k = 0; k < got.data.size(); ++k)
      CHECK(got.data[k] == doctest::Approx(want.data[k]).epsilon(1e-12));
  }
  SUBCASE("isotropic mask") {
    auto layer = make_conv_layer<double>(2, 3, build_isotropic_mask(5, 5), rng);
    auto in = random_tensor<double>(2, 9, 11, 22, -2.0, 2.0);
    auto got = conv2d_masked(layer, in);
    auto want = conv_reference(layer, in);
    for (std::size_t k = 0; k < got.data.size(); ++k)
      CHECK(got.data[k] == doctest::Approx(want.data[k]).epsilon(1e-12));
  }
}

TEST_CASE("masked convolution equals a full convolution with zeroed weights") {
  RngEngine rng(9);
  KernelMask mask = build_anisotropic_mask(7, 7, kWaves, 10.0, 1.0);
  auto masked = make_conv_layer<double>(2, 2, mask, rng);

  ConvLayer<double> dense = masked;
  dense.mask = build_isotropic_mask(7, 7);
  dense.rebuild_support(); // full support, but inactive weights are zero

  auto in = random_tensor<double>(2, 12, 12, 31, -1.0, 1.0);
  auto a = conv2d_masked(masked, in);
  auto b = conv2d_masked(dense, in);
  for (std::size_t k = 0; k < a.data.size(); ++k)
    CHECK(a.data[k] == doctest::Approx(b.data[k]).epsilon(1e-12));
}

TEST_CASE("pooling and upsampling primitives") {
  Tensor3<double> in(1, 3, 5);
  double vals[3][5] = {{1, 5, 2, 0, 7}, {3, 4, 8, 1, 2}, {9, 0, 6, 3, 4}};
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x) in.at(0, y, x) = vals[y][x];

  std::vector<std::int32_t> argmax;
  auto pooled = maxpool2(in, &argmax);
  REQUIRE(pooled.h == 2);
  REQUIRE(pooled.w == 3);
  CHECK(pooled.at(0, 0, 0) == 5);
  CHECK(pooled.at(0, 0, 1) == 8);
  CHECK(pooled.at(0, 0, 2) == 7);
  CHECK(pooled.at(0, 1, 0) == 9);
  CHECK(pooled.at(0, 1, 1) == 6);
  CHECK(pooled.at(0, 1, 2) == 4);

  Tensor3<double> g(1, 2, 3);
  for (auto& v : g.data) v = 1.0;
  auto back = maxpool2_backward(g, argmax, 3, 5);
  CHECK(back.at(0, 0, 1) == 1.0); // the 5
  CHECK(back.at(0, 1, 2) == 1.0); // the 8
  CHECK(back.at(0, 0, 4) == 1.0); // the 7
  CHECK(back.at(0, 2, 0) == 1.0); // the 9
  double total = 0;
  for (double v : back.data) total += v;
  CHECK(total == 6.0);

  auto up = upsample2(pooled);
  REQUIRE(up.h == 4);
  REQUIRE(up.w == 6);
  CHECK(up.at(0, 0, 0) == 5);
  CHECK(up.at(0, 1, 1) == 5);
  CHECK(up.at(0, 3, 5) == 4);

  auto cropped = crop(up, 3, 5);
  CHECK(cropped.h == 3);
  CHECK(cropped.w == 5);
  CHECK(cropped.at(0, 2, 4) == 4);
  CHECK_THROWS_AS(crop(up, 5, 5), std::invalid_argument);
}

TEST_CASE("relu and its gradient gate") {
  Tensor3<double> z(1, 1, 4);
  z.data = {-1.0, 0.0, 0.5, 2.0};
  auto a = relu(z);
  CHECK(a.data == std::vector<double>{0.0, 0.0, 0.5, 2.0});
  Tensor3<double> g(1, 1, 4);
  g.data = {1.0, 1.0, 1.0, 1.0};
  relu_backward(z, g);
  CHECK(g.data == std::vector<double>{0.0, 0.0, 1.0, 1.0});
}

TEST_CASE("parameter counts") {
  auto iso = make_model<float>(ModelArch{}, KernelKind::isotropic, kWaves, 10.0, 1.0, 128.0, 1);
  REQUIRE(iso.layers.size() == 7);
  // Per layer: active cells * c_in * c_out + c_out.
  const long long expected_iso[] = {3040, 94128, 75296, 38448, 48040, 181496, 2745};
  for (int l = 0; l < 7; ++l) CHECK(iso.layers[l].param_count() == expected_iso[l]);
  CHECK(iso.param_count() == 443193);

  auto aniso =
      make_model<float>(ModelArch{}, KernelKind::anisotropic, kWaves, 10.0, 1.0, 128.0, 1);
  const long long expected_aniso[] = {1600, 40368, 32288, 20016, 25000, 65016, 1177};
  for (int l = 0; l < 7; ++l) CHECK(aniso.layers[l].param_count() == expected_aniso[l]);
  CHECK(aniso.param_count() == 185465);

  double ratio = static_cast<double>(aniso.param_count()) / static_cast<double>(iso.param_count());
  CHECK(ratio > 0.40);
  CHECK(ratio < 0.60);
}

TEST_CASE("forward shape algebra") {
  auto model = make_model<float>(ModelArch{}, KernelKind::anisotropic, kWaves, 10.0, 1.0, 128.0, 2);

  SUBCASE("training window") {
    auto out = forward_scaled(model, random_tensor<float>(3, 80, 60, 3));
    CHECK(out.c == 1);
    CHECK(out.h == 80);
    CHECK(out.w == 60);
  }
  SUBCASE("odd extents survive the pool/upsample round trip") {
    auto out = forward_scaled(model, random_tensor<float>(3, 37, 41, 4));
    CHECK(out.h == 37);
    CHECK(out.w == 41);
  }
  SUBCASE("long corridor window") {
    auto out = forward_scaled(model, random_tensor<float>(3, 40, 1140, 5));
    CHECK(out.h == 40);
    CHECK(out.w == 1140);
  }
  SUBCASE("undersized fields are rejected") {
    CHECK_THROWS_AS(forward_scaled(model, random_tensor<float>(3, 15, 60, 6)),
                    std::invalid_argument);
    CHECK_THROWS_AS(forward_scaled(model, random_tensor<float>(3, 80, 12, 7)),
                    std::invalid_argument);
    CHECK_THROWS_AS(forward_scaled(model, random_tensor<float>(2, 80, 60, 8)),
                    std::invalid_argument);
  }
}

TEST_CASE("output is non-negative and inference clamps to the cap") {
  auto model = make_model<float>(ModelArch{}, KernelKind::isotropic, kWaves, 10.0, 1.0, 128.0, 11);
  auto out = forward_scaled(model, random_tensor<float>(3, 24, 24, 12));
  for (float v : out.data) CHECK(v >= 0.0f);

  ProbeInputTensor probe;
  probe.grid.nx = 24;
  probe.grid.nt = 24;
  probe.v_scale_kmph = 128.0;
  probe.channels.assign(3 * 24 * 24, 200);
  SpeedField field = infer(model, probe);
  for (double v : field.values) {
    CHECK(v >= 0.0);
    CHECK(v <= 130.0);
  }
}

TEST_CASE("gradients match central finite differences") {
  // Double precision end-to-end check of the full backward pass on a small
  // field: perturb sampled weights and biases in every layer by +/-1e-4 and
  // compare the loss slope with the analytic gradient to 1e-4 relative.
  auto model =
      make_model<double>(ModelArch{}, KernelKind::anisotropic, kWaves, 10.0, 1.0, 128.0, 13);
  auto input = random_tensor<double>(3, 16, 16, 14);
  auto target = random_tensor<double>(1, 16, 16, 15);

  auto grads = ParamGrads<double>::zeros_like(model);
  loss_and_gradients(model, input, target, grads);

  const double h = 1e-4;
  // Central difference at steps h and h/2. Inside one relu-linear region the
  // loss is exactly quadratic in a single parameter, so the two estimates
  // agree to roundoff; disagreement means the probe interval straddles a
  // relu or pooling kink and the measurement is meaningless there.
  auto fd_slope = [&](double& param) {
    double saved = param;
    param = saved + h;
    double lp = mse_scaled(forward_scaled(model, input), target);
    param = saved - h;
    double lm = mse_scaled(forward_scaled(model, input), target);
    param = saved + 0.5 * h;
    double lp2 = mse_scaled(forward_scaled(model, input), target);
    param = saved - 0.5 * h;
    double lm2 = mse_scaled(forward_scaled(model, input), target);
    param = saved;
    double fd = (lp - lm) / (2.0 * h);
    double fd2 = (lp2 - lm2) / h;
    bool smooth = std::abs(fd - fd2) <= 1e-8 + 2e-6 * std::max(std::abs(fd), std::abs(fd2));
    return std::make_pair(fd, smooth);
  };

  int tested = 0;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& layer = model.layers[l];
    int per_layer = 0;
    // Walk the active support; step over output channels for variety.
    for (int o = 0; o < layer.c_out && per_layer < 6; o += std::max(1, layer.c_out / 5)) {
      for (int s : layer.support) {
        std::size_t idx = (static_cast<std::size_t>(o) * layer.c_in + o % layer.c_in) *
                              (layer.kh * layer.kw) +
                          s;
        double analytic = grads.w[l][idx];
        if (std::abs(analytic) < 1e-7) continue;
        auto [fd, smooth] = fd_slope(layer.weights[idx]);
        if (smooth) {
          CAPTURE(l);
          CAPTURE(idx);
          CHECK(std::abs(fd - analytic) / std::max(std::abs(fd), std::abs(analytic)) < 1e-4);
          ++tested;
        }
        ++per_layer;
        break;
      }
    }
    // One bias per layer.
    double analytic_b = grads.b[l][0];
    if (std::abs(analytic_b) >= 1e-7) {
      auto [fd, smooth] = fd_slope(layer.bias[0]);
      if (smooth) {
        CHECK(std::abs(fd - analytic_b) / std::max(std::abs(fd), std::abs(analytic_b)) < 1e-4);
        ++tested;
      }
    }
  }
  CHECK(tested >= 30);
}

TEST_CASE("gradients vanish on masked kernel cells") {
  auto model =
      make_model<double>(ModelArch{}, KernelKind::anisotropic, kWaves, 10.0, 1.0, 128.0, 17);
  auto grads = ParamGrads<double>::zeros_like(model);
  loss_and_gradients(model, random_tensor<double>(3, 16, 16, 18),
                     random_tensor<double>(1, 16, 16, 19), grads);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    for (int o = 0; o < layer.c_out; ++o)
      for (int ci = 0; ci < layer.c_in; ++ci)
        for (int u = 0; u < layer.kh; ++u)
          for (int v = 0; v < layer.kw; ++v)
            if (!layer.mask.at(u - layer.kh / 2, v - layer.kw / 2))
              CHECK(grads.w[l][((static_cast<std::size_t>(o) * layer.c_in + ci) * layer.kh + u) *
                                  layer.kw +
                              v] == 0.0);
  }
}

TEST_CASE("model save/load round trip is exact") {
  auto model =
      make_model<float>(ModelArch{}, KernelKind::anisotropic, kWaves, 10.0, 1.0, 128.0, 23);
  auto path = temp_file("model_roundtrip.json");
  save_model(model, path);
  auto loaded = load_model<float>(path);

  CHECK(loaded.kind == model.kind);
  CHECK(loaded.v_scale_kmph == model.v_scale_kmph);
  CHECK(loaded.param_count() == model.param_count());
  REQUIRE(loaded.layers.size() == model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    CHECK(loaded.layers[l].weights == model.layers[l].weights);
    CHECK(loaded.layers[l].bias == model.layers[l].bias);
    CHECK(loaded.layers[l].mask == model.layers[l].mask);
  }

  auto in = random_tensor<float>(3, 16, 16, 24);
  auto a = forward_scaled(model, in);
  auto b = forward_scaled(loaded, in);
  CHECK(a.data == b.data);
}

TEST_CASE("model loader rejects corrupted files") {
  auto model = make_model<float>(ModelArch{}, KernelKind::anisotropic, kWaves, 10.0, 1.0, 128.0, 29);
  auto path = temp_file("model_bad.json");

  SUBCASE("wrong dtype requested") {
    save_model(model, path);
    CHECK_THROWS_WITH_AS(load_model<double>(path), doctest::Contains("dtype"),
                         std::runtime_error);
  }
  SUBCASE("not json") {
    std::ofstream(path) << "not a model";
    CHECK_THROWS_AS(load_model<float>(path), std::runtime_error);
  }
  SUBCASE("unknown format") {
    std::ofstream(path) << R"({"format":"other","version":1})";
    CHECK_THROWS_AS(load_model<float>(path), std::runtime_error);
  }
  SUBCASE("nonzero masked weight") {
    model.layers[1].weights[0] = 0.5f; // corner of a 7x7 kernel is inactive
    save_model(model, path);
    CHECK_THROWS_WITH_AS(load_model<float>(path), doctest::Contains("masked"),
                         std::runtime_error);
  }
  SUBCASE("mask inconsistent with wave geometry") {
    model.waves.c_w_kmph = 50.0; // masks were built for 18 kmph
    save_model(model, path);
    CHECK_THROWS_WITH_AS(load_model<float>(path), doctest::Contains("mask"),
                         std::runtime_error);
  }
}
