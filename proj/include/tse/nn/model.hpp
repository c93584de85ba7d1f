#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "tse/grid.hpp"
#include "tse/masks.hpp"
#include "tse/nn/layers.hpp"
#include "tse/nn/tensor.hpp"
#include "tse/probes.hpp"

namespace tse::nn {

/// Smallest input extent the three-level encoder/decoder accepts.
constexpr int kMinFieldExtent = 16;

/// Speeds produced by inference are clamped to [0, this] in kmph.
constexpr double kSpeedCapKmph = 130.0;

struct LayerSpec {
  int k = 0;     ///< square kernel extent
  int c_out = 0; ///< output channels
  bool operator==(const LayerSpec&) const = default;
};

/// Encoder/decoder layout. Encoder stages are conv+relu+pool, decoder
/// stages conv+relu+upsample(+crop to the mirrored encoder shape), the head
/// is conv+relu back to one channel.
struct ModelArch {
  std::vector<LayerSpec> encoder{{5, 40}, {7, 48}, {7, 32}};
  std::vector<LayerSpec> decoder{{5, 48}, {5, 40}, {9, 56}};
  LayerSpec head{7, 1};
  bool operator==(const ModelArch&) const = default;
};

void validate_arch(const ModelArch& arch);

enum class KernelKind { isotropic, anisotropic };

template <typename T>
struct ConvModel {
  ModelArch arch;
  KernelKind kind = KernelKind::isotropic;
  WaveParams waves;            ///< meaningful when kind is anisotropic
  double grid_dx_m = 10.0;     ///< cell geometry the masks were built for
  double grid_dt_s = 1.0;
  double v_scale_kmph = 128.0; ///< speed normalization shared by input and output
  std::vector<ConvLayer<T>> layers; ///< encoder, decoder, head in order

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& layer : layers) n += layer.param_count();
    return n;
  }

  /// Re-applies the mask constraint to every layer.
  void project_to_masks() {
    for (auto& layer : layers) layer.project_to_mask();
  }

  /// Largest |weight| sitting on an inactive kernel cell; 0 when the
  /// constraint holds exactly.
  T max_abs_masked_weight() const {
    T worst(0);
    for (const auto& layer : layers)
      for (int o = 0; o < layer.c_out; ++o)
        for (int ci = 0; ci < layer.c_in; ++ci)
          for (int u = 0; u < layer.kh; ++u)
            for (int v = 0; v < layer.kw; ++v)
              if (!layer.mask.at(u - layer.kh / 2, v - layer.kw / 2)) {
                T a = layer.weight(o, ci, u, v);
                worst = std::max(worst, a < T(0) ? static_cast<T>(-a) : a);
              }
    return worst;
  }
};

template <typename T>
ConvModel<T> make_model(const ModelArch& arch, KernelKind kind, const WaveParams& waves,
                        double dx_m, double dt_s, double v_scale_kmph, std::uint64_t seed) {
  validate_arch(arch);
  if (kind == KernelKind::anisotropic) validate_wave_params(waves);
  if (!(v_scale_kmph > 0.0)) throw std::invalid_argument("model: v_scale must be positive");

  auto mask_for = [&](int k) {
    return kind == KernelKind::anisotropic ? build_anisotropic_mask(k, k, waves, dx_m, dt_s)
                                           : build_isotropic_mask(k, k);
  };
  ConvModel<T> model;
  model.arch = arch;
  model.kind = kind;
  model.waves = waves;
  model.grid_dx_m = dx_m;
  model.grid_dt_s = dt_s;
  model.v_scale_kmph = v_scale_kmph;
  RngEngine rng(seed);
  int c_in = 3;
  for (const auto& spec : arch.encoder) {
    model.layers.push_back(make_conv_layer<T>(c_in, spec.c_out, mask_for(spec.k), rng));
    c_in = spec.c_out;
  }
  for (const auto& spec : arch.decoder) {
    model.layers.push_back(make_conv_layer<T>(c_in, spec.c_out, mask_for(spec.k), rng));
    c_in = spec.c_out;
  }
  model.layers.push_back(make_conv_layer<T>(c_in, arch.head.c_out, mask_for(arch.head.k), rng));
  return model;
}

/// Everything the backward pass needs from one forward evaluation.
template <typename T>
struct ForwardTrace {
  std::vector<Tensor3<T>> conv_in;  ///< input of each conv layer
  std::vector<Tensor3<T>> pre_act;  ///< conv output before relu
  std::vector<std::vector<std::int32_t>> pool_argmax; ///< per encoder stage
  std::vector<std::pair<int, int>> pre_pool_shape;    ///< per encoder stage
  std::vector<std::pair<int, int>> pre_crop_shape;    ///< per decoder stage
};

/// Forward pass in normalized units (inputs in [0, 1], output likewise
/// before any clamping). Input must be 3-channel with both extents at least
/// kMinFieldExtent.
template <typename T>
Tensor3<T> forward_scaled(const ConvModel<T>& model, const Tensor3<T>& input,
                          ForwardTrace<T>* trace = nullptr) {
  if (input.c != 3) throw std::invalid_argument("forward: expected 3 input channels");
  if (input.h < kMinFieldExtent || input.w < kMinFieldExtent)
    throw std::invalid_argument("forward: field smaller than the minimum extent");

  std::size_t n_enc = model.arch.encoder.size();
  std::size_t n_dec = model.arch.decoder.size();
  std::vector<std::pair<int, int>> shapes; // entry k: shape entering encoder stage k
  Tensor3<T> x = input;
  std::size_t li = 0;
  for (std::size_t k = 0; k < n_enc; ++k, ++li) {
    shapes.emplace_back(x.h, x.w);
    Tensor3<T> z = conv2d_masked(model.layers[li], x);
    Tensor3<T> a = relu(z);
    std::vector<std::int32_t> argmax;
    Tensor3<T> pooled = maxpool2(a, trace ? &argmax : nullptr);
    if (trace) {
      trace->conv_in.push_back(std::move(x));
      trace->pre_act.push_back(std::move(z));
      trace->pool_argmax.push_back(std::move(argmax));
      trace->pre_pool_shape.emplace_back(a.h, a.w);
    }
    x = std::move(pooled);
  }
  for (std::size_t k = 0; k < n_dec; ++k, ++li) {
    Tensor3<T> z = conv2d_masked(model.layers[li], x);
    Tensor3<T> a = relu(z);
    Tensor3<T> up = upsample2(a);
    auto [th, tw] = shapes[n_enc - 1 - k];
    Tensor3<T> cropped = crop(up, th, tw);
    if (trace) {
      trace->conv_in.push_back(std::move(x));
      trace->pre_act.push_back(std::move(z));
      trace->pre_crop_shape.emplace_back(up.h, up.w);
    }
    x = std::move(cropped);
  }
  Tensor3<T> z = conv2d_masked(model.layers[li], x);
  Tensor3<T> out = relu(z);
  if (trace) {
    trace->conv_in.push_back(std::move(x));
    trace->pre_act.push_back(std::move(z));
  }
  return out;
}

/// Per-layer parameter gradients (full kernel layout, masked cells zero).
template <typename T>
struct ParamGrads {
  std::vector<std::vector<T>> w;
  std::vector<std::vector<T>> b;

  static ParamGrads zeros_like(const ConvModel<T>& model) {
    ParamGrads g;
    for (const auto& layer : model.layers) {
      g.w.emplace_back(layer.weight_count(), T(0));
      g.b.emplace_back(layer.bias.size(), T(0));
    }
    return g;
  }

  void add(const ParamGrads& other, T scale = T(1)) {
    for (std::size_t l = 0; l < w.size(); ++l) {
      for (std::size_t k = 0; k < w[l].size(); ++k) w[l][k] += scale * other.w[l][k];
      for (std::size_t k = 0; k < b[l].size(); ++k) b[l][k] += scale * other.b[l][k];
    }
  }
};

/// Mean over cells of the squared difference.
template <typename T>
T mse_scaled(const Tensor3<T>& pred, const Tensor3<T>& target) {
  if (!pred.same_shape(target)) throw std::invalid_argument("mse: shape mismatch");
  double acc = 0.0;
  for (std::size_t k = 0; k < pred.data.size(); ++k) {
    double d = static_cast<double>(pred.data[k]) - static_cast<double>(target.data[k]);
    acc += d * d;
  }
  return static_cast<T>(acc / static_cast<double>(pred.data.size()));
}

/// Loss and parameter gradients for one (input, target) pair in normalized
/// units. Gradients are written into `grads` (overwritten, not accumulated).
template <typename T>
T loss_and_gradients(const ConvModel<T>& model, const Tensor3<T>& input, const Tensor3<T>& target,
                     ParamGrads<T>& grads) {
  ForwardTrace<T> trace;
  Tensor3<T> out = forward_scaled(model, input, &trace);
  T loss = mse_scaled(out, target);

  Tensor3<T> grad(out.c, out.h, out.w);
  T scale = T(2) / static_cast<T>(out.data.size());
  for (std::size_t k = 0; k < out.data.size(); ++k)
    grad.data[k] = scale * (out.data[k] - target.data[k]);

  grads.w.resize(model.layers.size());
  grads.b.resize(model.layers.size());

  std::size_t n_enc = model.arch.encoder.size();
  std::size_t n_dec = model.arch.decoder.size();
  std::size_t li = model.layers.size() - 1;

  // Head: relu then conv.
  relu_backward(trace.pre_act[li], grad);
  {
    ConvGrads<T> cg;
    Tensor3<T> grad_in;
    conv2d_masked_backward(model.layers[li], trace.conv_in[li], grad, grad_in, cg);
    grads.w[li] = std::move(cg.w);
    grads.b[li] = std::move(cg.b);
    grad = std::move(grad_in);
  }

  for (std::size_t k = n_dec; k-- > 0;) {
    --li;
    auto [uh, uw] = trace.pre_crop_shape[k];
    grad = crop_backward(grad, uh, uw);
    grad = upsample2_backward(grad, uh / 2, uw / 2);
    relu_backward(trace.pre_act[li], grad);
    ConvGrads<T> cg;
    Tensor3<T> grad_in;
    conv2d_masked_backward(model.layers[li], trace.conv_in[li], grad, grad_in, cg);
    grads.w[li] = std::move(cg.w);
    grads.b[li] = std::move(cg.b);
    grad = std::move(grad_in);
  }

  for (std::size_t k = n_enc; k-- > 0;) {
    --li;
    auto [ph, pw] = trace.pre_pool_shape[k];
    grad = maxpool2_backward(grad, trace.pool_argmax[k], ph, pw);
    relu_backward(trace.pre_act[li], grad);
    ConvGrads<T> cg;
    Tensor3<T> grad_in;
    conv2d_masked_backward(model.layers[li], trace.conv_in[li], grad, grad_in, cg);
    grads.w[li] = std::move(cg.w);
    grads.b[li] = std::move(cg.b);
    grad = std::move(grad_in);
  }
  return loss;
}

/// Byte image to normalized float tensor (values / 255).
template <typename T>
Tensor3<T> to_input_tensor(const ProbeInputTensor& probe) {
  Tensor3<T> x(3, probe.grid.nx, probe.grid.nt);
  for (std::size_t k = 0; k < x.data.size(); ++k)
    x.data[k] = static_cast<T>(probe.channels[k]) / T(255);
  return x;
}

/// Speed field to normalized target tensor (values / v_scale).
template <typename T>
Tensor3<T> to_target_tensor(const SpeedField& field, double v_scale_kmph) {
  Tensor3<T> t(1, field.grid.nx, field.grid.nt);
  for (std::size_t k = 0; k < t.data.size(); ++k)
    t.data[k] = static_cast<T>(field.values[k] / v_scale_kmph);
  return t;
}

/// End-to-end inference: encode scaling, forward pass, rescale to kmph and
/// clamp to [0, kSpeedCapKmph]. Works on any grid with extents of at least
/// kMinFieldExtent cells.
template <typename T>
SpeedField infer(const ConvModel<T>& model, const ProbeInputTensor& probe) {
  Tensor3<T> x = to_input_tensor<T>(probe);
  Tensor3<T> y = forward_scaled(model, x);
  SpeedField field = SpeedField::zeros(probe.grid);
  for (std::size_t k = 0; k < field.values.size(); ++k) {
    double v = static_cast<double>(y.data[k]) * model.v_scale_kmph;
    field.values[k] = std::clamp(v, 0.0, kSpeedCapKmph);
  }
  return field;
}

// --- persistence ----------------------------------------------------------

void save_model(const ConvModel<float>& model, const std::filesystem::path& path);
void save_model(const ConvModel<double>& model, const std::filesystem::path& path);

template <typename T>
ConvModel<T> load_model(const std::filesystem::path& path);

} // namespace tse::nn
