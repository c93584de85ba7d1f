#pragma once

#include <cstddef>
#include <vector>

namespace tse::nn {

/// Dense rank-3 array in channel-major layout: index (ch, y, x) maps to
/// data[(ch * h + y) * w + x]. For traffic fields y is space and x is time.
template <typename T>
struct Tensor3 {
  int c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor3() = default;
  Tensor3(int c_, int h_, int w_)
      : c(c_), h(h_), w(w_), data(static_cast<std::size_t>(c_) * h_ * w_, T(0)) {}

  T& at(int ch, int y, int x) { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  const T& at(int ch, int y, int x) const {
    return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }

  T* plane(int ch) { return data.data() + static_cast<std::size_t>(ch) * h * w; }
  const T* plane(int ch) const { return data.data() + static_cast<std::size_t>(ch) * h * w; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Tensor3& other) const {
    return c == other.c && h == other.h && w == other.w;
  }
};

} // namespace tse::nn
