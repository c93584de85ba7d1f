#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "tse/masks.hpp"
#include "tse/nn/tensor.hpp"
#include "tse/random.hpp"

namespace tse::nn {

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<MatrixRM<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const MatrixRM<T>>;

/// Same-padded stride-1 convolution whose kernel is restricted to the
/// active cells of a binary mask. Weights at inactive cells are identically
/// zero and are excluded from the arithmetic entirely: the layer packs the
/// active kernel offsets once and both passes run over that support only.
/// Kernel row index u corresponds to space offset di = u - kh/2 and column
/// index v to time offset dj = v - kw/2.
template <typename T>
struct ConvLayer {
  int c_in = 0, c_out = 0, kh = 0, kw = 0;
  KernelMask mask;
  std::vector<T> weights; ///< c_out * c_in * kh * kw, masked entries zero
  std::vector<T> bias;    ///< c_out
  std::vector<int> support; ///< flat kernel offsets (u * kw + v) with mask == 1

  std::size_t weight_count() const {
    return static_cast<std::size_t>(c_out) * c_in * kh * kw;
  }
  T& weight(int o, int ci, int u, int v) {
    return weights[((static_cast<std::size_t>(o) * c_in + ci) * kh + u) * kw + v];
  }
  const T& weight(int o, int ci, int u, int v) const {
    return weights[((static_cast<std::size_t>(o) * c_in + ci) * kh + u) * kw + v];
  }

  void rebuild_support() {
    support.clear();
    for (int u = 0; u < kh; ++u)
      for (int v = 0; v < kw; ++v)
        if (mask.at(u - kh / 2, v - kw / 2)) support.push_back(u * kw + v);
  }

  /// Zeroes every weight whose kernel cell is inactive.
  void project_to_mask() {
    for (int o = 0; o < c_out; ++o)
      for (int ci = 0; ci < c_in; ++ci)
        for (int u = 0; u < kh; ++u)
          for (int v = 0; v < kw; ++v)
            if (!mask.at(u - kh / 2, v - kw / 2)) weight(o, ci, u, v) = T(0);
  }

  /// Trainable parameters: weights on the support plus biases.
  std::int64_t param_count() const {
    return static_cast<std::int64_t>(c_out) * c_in * static_cast<std::int64_t>(support.size()) +
           c_out;
  }
};

template <typename T>
ConvLayer<T> make_conv_layer(int c_in, int c_out, const KernelMask& mask, RngEngine& rng) {
  ConvLayer<T> layer;
  layer.c_in = c_in;
  layer.c_out = c_out;
  layer.kh = mask.kh;
  layer.kw = mask.kw;
  layer.mask = mask;
  layer.weights.assign(layer.weight_count(), T(0));
  layer.bias.assign(c_out, T(0));
  layer.rebuild_support();
  // Uniform init scaled by the effective fan-in (active cells only).
  double fan_in = static_cast<double>(c_in) * static_cast<double>(layer.support.size());
  double bound = std::sqrt(6.0 / fan_in);
  for (int o = 0; o < c_out; ++o)
    for (int ci = 0; ci < c_in; ++ci)
      for (int s : layer.support)
        layer.weights[(static_cast<std::size_t>(o) * c_in + ci) * (layer.kh * layer.kw) + s] =
            static_cast<T>(uniform(rng, -bound, bound));
  return layer;
}

/// Scratch buffers for one convolution pass, reusable across calls.
template <typename T>
struct ConvScratch {
  std::vector<T> col;    ///< (c_in * |support|) x (h * w)
  std::vector<T> packed; ///< c_out x (c_in * |support|)
};

/// Gathers input patches over the active kernel offsets only; out-of-bounds
/// taps read as zero.
template <typename T>
void im2col_masked(const ConvLayer<T>& layer, const Tensor3<T>& in, std::vector<T>& col) {
  const int h = in.h, w = in.w;
  const int S = static_cast<int>(layer.support.size());
  const std::size_t n = static_cast<std::size_t>(h) * w;
  col.assign(static_cast<std::size_t>(layer.c_in) * S * n, T(0));
  for (int ci = 0; ci < layer.c_in; ++ci) {
    const T* src = in.plane(ci);
    for (int s = 0; s < S; ++s) {
      int du = layer.support[s] / layer.kw - layer.kh / 2;
      int dv = layer.support[s] % layer.kw - layer.kw / 2;
      T* dst = col.data() + (static_cast<std::size_t>(ci) * S + s) * n;
      int y_lo = std::max(0, -du), y_hi = std::min(h, h - du);
      int x_lo = std::max(0, -dv), x_hi = std::min(w, w - dv);
      for (int y = y_lo; y < y_hi; ++y) {
        const T* row = src + static_cast<std::size_t>(y + du) * w + dv;
        T* out_row = dst + static_cast<std::size_t>(y) * w;
        for (int x = x_lo; x < x_hi; ++x) out_row[x] = row[x];
      }
    }
  }
}

template <typename T>
void pack_weights(const ConvLayer<T>& layer, std::vector<T>& packed) {
  const int S = static_cast<int>(layer.support.size());
  const int kk = layer.kh * layer.kw;
  packed.resize(static_cast<std::size_t>(layer.c_out) * layer.c_in * S);
  for (int o = 0; o < layer.c_out; ++o)
    for (int ci = 0; ci < layer.c_in; ++ci)
      for (int s = 0; s < S; ++s)
        packed[(static_cast<std::size_t>(o) * layer.c_in + ci) * S + s] =
            layer.weights[(static_cast<std::size_t>(o) * layer.c_in + ci) * kk +
                          layer.support[s]];
}

/// out(o, y, x) = bias[o] + sum over active taps of weight * input.
template <typename T>
Tensor3<T> conv2d_masked(const ConvLayer<T>& layer, const Tensor3<T>& in,
                         ConvScratch<T>* scratch = nullptr) {
  if (in.c != layer.c_in) throw std::invalid_argument("conv2d_masked: channel mismatch");
  ConvScratch<T> local;
  ConvScratch<T>& scr = scratch ? *scratch : local;
  im2col_masked(layer, in, scr.col);
  pack_weights(layer, scr.packed);

  const int K = layer.c_in * static_cast<int>(layer.support.size());
  const int n = in.h * in.w;
  Tensor3<T> out(layer.c_out, in.h, in.w);
  MatMap<T> out_m(out.data.data(), layer.c_out, n);
  ConstMatMap<T> w_m(scr.packed.data(), layer.c_out, K);
  ConstMatMap<T> col_m(scr.col.data(), K, n);
  out_m.noalias() = w_m * col_m;
  for (int o = 0; o < layer.c_out; ++o)
    out_m.row(o).array() += static_cast<T>(layer.bias[o]);
  return out;
}

/// Gradients of a scalar loss through conv2d_masked. grad_w has full kernel
/// layout with zeros at inactive cells; the column buffer must hold the
/// forward im2col of the same input (it is recomputed here for safety).
template <typename T>
struct ConvGrads {
  std::vector<T> w;
  std::vector<T> b;
};

template <typename T>
void conv2d_masked_backward(const ConvLayer<T>& layer, const Tensor3<T>& in,
                            const Tensor3<T>& grad_out, Tensor3<T>& grad_in, ConvGrads<T>& grads,
                            ConvScratch<T>* scratch = nullptr) {
  ConvScratch<T> local;
  ConvScratch<T>& scr = scratch ? *scratch : local;
  im2col_masked(layer, in, scr.col);
  pack_weights(layer, scr.packed);

  const int S = static_cast<int>(layer.support.size());
  const int K = layer.c_in * S;
  const int n = in.h * in.w;
  const int kk = layer.kh * layer.kw;

  // Left-to-right scalar sums: Eigen's vectorized redux peels to the first
  // aligned element, making the addition order depend on heap addresses.
  grads.b.assign(layer.c_out, T(0));
  ConstMatMap<T> go_m(grad_out.data.data(), layer.c_out, n);
  for (int o = 0; o < layer.c_out; ++o) {
    const T* row = grad_out.plane(o);
    T acc(0);
    for (int k = 0; k < n; ++k) acc += row[k];
    grads.b[o] = acc;
  }

  std::vector<T> packed_gw(static_cast<std::size_t>(layer.c_out) * K);
  ConstMatMap<T> col_m(scr.col.data(), K, n);
  MatMap<T> pgw_m(packed_gw.data(), layer.c_out, K);
  pgw_m.noalias() = go_m * col_m.transpose();

  grads.w.assign(layer.weight_count(), T(0));
  for (int o = 0; o < layer.c_out; ++o)
    for (int ci = 0; ci < layer.c_in; ++ci)
      for (int s = 0; s < S; ++s)
        grads.w[(static_cast<std::size_t>(o) * layer.c_in + ci) * kk + layer.support[s]] =
            packed_gw[(static_cast<std::size_t>(o) * layer.c_in + ci) * S + s];

  std::vector<T> grad_col(static_cast<std::size_t>(K) * n);
  ConstMatMap<T> w_m(scr.packed.data(), layer.c_out, K);
  MatMap<T> gcol_m(grad_col.data(), K, n);
  gcol_m.noalias() = w_m.transpose() * go_m;

  grad_in = Tensor3<T>(layer.c_in, in.h, in.w);
  const int h = in.h, w = in.w;
  for (int ci = 0; ci < layer.c_in; ++ci) {
    T* dst = grad_in.plane(ci);
    for (int s = 0; s < S; ++s) {
      int du = layer.support[s] / layer.kw - layer.kh / 2;
      int dv = layer.support[s] % layer.kw - layer.kw / 2;
      const T* src = grad_col.data() + (static_cast<std::size_t>(ci) * S + s) * static_cast<std::size_t>(h) * w;
      int y_lo = std::max(0, -du), y_hi = std::min(h, h - du);
      int x_lo = std::max(0, -dv), x_hi = std::min(w, w - dv);
      for (int y = y_lo; y < y_hi; ++y) {
        T* drow = dst + static_cast<std::size_t>(y + du) * w + dv;
        const T* srow = src + static_cast<std::size_t>(y) * w;
        for (int x = x_lo; x < x_hi; ++x) drow[x] += srow[x];
      }
    }
  }
}

// --- pointwise and resolution-changing layers -----------------------------

template <typename T>
Tensor3<T> relu(const Tensor3<T>& z) {
  Tensor3<T> out = z;
  for (T& v : out.data) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
void relu_backward(const Tensor3<T>& z, Tensor3<T>& grad) {
  for (std::size_t k = 0; k < z.data.size(); ++k)
    if (z.data[k] <= T(0)) grad.data[k] = T(0);
}

/// 2x2 max pooling with stride 2 and ceil-mode output shape, so odd extents
/// keep their trailing row/column as a partial window. argmax records the
/// within-plane flat index feeding each output for the backward scatter.
template <typename T>
Tensor3<T> maxpool2(const Tensor3<T>& in, std::vector<std::int32_t>* argmax = nullptr) {
  int ho = (in.h + 1) / 2, wo = (in.w + 1) / 2;
  Tensor3<T> out(in.c, ho, wo);
  if (argmax) argmax->assign(out.size(), 0);
  for (int ch = 0; ch < in.c; ++ch) {
    const T* src = in.plane(ch);
    for (int yo = 0; yo < ho; ++yo) {
      for (int xo = 0; xo < wo; ++xo) {
        int best = -1;
        T best_v{};
        for (int dy = 0; dy < 2; ++dy) {
          int y = 2 * yo + dy;
          if (y >= in.h) break;
          for (int dxp = 0; dxp < 2; ++dxp) {
            int x = 2 * xo + dxp;
            if (x >= in.w) break;
            T v = src[static_cast<std::size_t>(y) * in.w + x];
            if (best < 0 || v > best_v) {
              best = y * in.w + x;
              best_v = v;
            }
          }
        }
        out.at(ch, yo, xo) = best_v;
        if (argmax)
          (*argmax)[(static_cast<std::size_t>(ch) * ho + yo) * wo + xo] = best;
      }
    }
  }
  return out;
}

template <typename T>
Tensor3<T> maxpool2_backward(const Tensor3<T>& grad_out, const std::vector<std::int32_t>& argmax,
                             int h_in, int w_in) {
  Tensor3<T> grad_in(grad_out.c, h_in, w_in);
  for (int ch = 0; ch < grad_out.c; ++ch) {
    T* dst = grad_in.plane(ch);
    const T* src = grad_out.plane(ch);
    const std::int32_t* arg = argmax.data() + static_cast<std::size_t>(ch) * grad_out.h * grad_out.w;
    for (int k = 0; k < grad_out.h * grad_out.w; ++k) dst[arg[k]] += src[k];
  }
  return grad_in;
}

/// Nearest-neighbor 2x upsampling.
template <typename T>
Tensor3<T> upsample2(const Tensor3<T>& in) {
  Tensor3<T> out(in.c, 2 * in.h, 2 * in.w);
  for (int ch = 0; ch < in.c; ++ch) {
    const T* src = in.plane(ch);
    T* dst = out.plane(ch);
    for (int y = 0; y < out.h; ++y) {
      const T* srow = src + static_cast<std::size_t>(y / 2) * in.w;
      T* drow = dst + static_cast<std::size_t>(y) * out.w;
      for (int x = 0; x < out.w; ++x) drow[x] = srow[x / 2];
    }
  }
  return out;
}

template <typename T>
Tensor3<T> upsample2_backward(const Tensor3<T>& grad_out, int h_in, int w_in) {
  Tensor3<T> grad_in(grad_out.c, h_in, w_in);
  for (int ch = 0; ch < grad_out.c; ++ch) {
    const T* src = grad_out.plane(ch);
    T* dst = grad_in.plane(ch);
    for (int y = 0; y < grad_out.h; ++y)
      for (int x = 0; x < grad_out.w; ++x)
        dst[static_cast<std::size_t>(y / 2) * w_in + x / 2] +=
            src[static_cast<std::size_t>(y) * grad_out.w + x];
  }
  return grad_in;
}

/// Keeps the top-left h x w corner.
template <typename T>
Tensor3<T> crop(const Tensor3<T>& in, int h, int w) {
  if (h > in.h || w > in.w) throw std::invalid_argument("crop: target larger than input");
  Tensor3<T> out(in.c, h, w);
  for (int ch = 0; ch < in.c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(ch, y, x) = in.at(ch, y, x);
  return out;
}

template <typename T>
Tensor3<T> crop_backward(const Tensor3<T>& grad_out, int h_in, int w_in) {
  Tensor3<T> grad_in(grad_out.c, h_in, w_in);
  for (int ch = 0; ch < grad_out.c; ++ch)
    for (int y = 0; y < grad_out.h; ++y)
      for (int x = 0; x < grad_out.w; ++x) grad_in.at(ch, y, x) = grad_out.at(ch, y, x);
  return grad_in;
}

} // namespace tse::nn
