#include "tse/masks.hpp"

#include <algorithm>
#include <stdexcept>

#include "tse/units.hpp"

namespace tse {

namespace {

constexpr double kGeomEps = 1e-9;

void validate_kernel_shape(int kh, int kw) {
  if (kh < 1 || kw < 1 || kh % 2 == 0 || kw % 2 == 0)
    throw std::invalid_argument("kernel dimensions must be odd and positive");
}

/// Does the closed box [at, bt] x [ax, bx] meet the line x = slope * t?
bool line_hits_box(double slope, double at, double bt, double ax, double bx) {
  double x1 = slope * at, x2 = slope * bt;
  double lo = std::min(x1, x2), hi = std::max(x1, x2);
  return std::max(lo, ax) <= std::min(hi, bx) + kGeomEps;
}

/// Does the closed box meet {(t, x) : t >= 0, s_min*t <= x <= s_max*t}?
/// The cone slice at time t is [s_min*t, s_max*t]; overlap with [ax, bx]
/// requires s_min*t <= bx and s_max*t >= ax, both monotone in t.
bool cone_half_hits_box(double s_min, double s_max, double at, double bt, double ax, double bx) {
  double t_lo = std::max(at, 0.0);
  double t_hi = bt;
  t_lo = std::max(t_lo, ax / s_max);
  t_hi = std::min(t_hi, bx / s_min);
  return t_lo <= t_hi + kGeomEps && t_hi >= -kGeomEps;
}

bool cone_hits_box(double s_min, double s_max, double at, double bt, double ax, double bx) {
  return cone_half_hits_box(s_min, s_max, at, bt, ax, bx) ||
         cone_half_hits_box(s_min, s_max, -bt, -at, -bx, -ax);
}

} // namespace

void validate_wave_params(const WaveParams& waves) {
  if (!(waves.c_v_min_kmph > 0.0) || !(waves.c_v_max_kmph >= waves.c_v_min_kmph))
    throw std::invalid_argument("wave params: need c_v_max >= c_v_min > 0");
  if (!(waves.c_w_kmph > 0.0))
    throw std::invalid_argument("wave params: need c_w > 0");
}

int KernelMask::cardinality() const {
  return static_cast<int>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

std::string KernelMask::render() const {
  std::string out;
  out.reserve(static_cast<std::size_t>(kh) * (kw + 1));
  for (int r = 0; r < kh; ++r) {
    int di = kh / 2 - r;
    for (int dj = -(kw / 2); dj <= kw / 2; ++dj) out += at(di, dj) ? '#' : '.';
    out += '\n';
  }
  return out;
}

KernelMask build_isotropic_mask(int kh, int kw) {
  validate_kernel_shape(kh, kw);
  KernelMask mask;
  mask.kh = kh;
  mask.kw = kw;
  mask.cells.assign(static_cast<std::size_t>(kh) * kw, 1);
  return mask;
}

KernelMask build_anisotropic_mask(int kh, int kw, const WaveParams& waves, double dx_m,
                                  double dt_s) {
  validate_kernel_shape(kh, kw);
  validate_wave_params(waves);
  if (!(dx_m > 0.0) || !(dt_s > 0.0))
    throw std::invalid_argument("mask: dx and dt must be positive");

  // Wave speeds in cells of space per cell of time.
  double cell_speed = dt_s / dx_m;
  double s_w = kmph_to_mps(waves.c_w_kmph) * cell_speed;
  double s_min = kmph_to_mps(waves.c_v_min_kmph) * cell_speed;
  double s_max = kmph_to_mps(waves.c_v_max_kmph) * cell_speed;

  KernelMask mask;
  mask.kh = kh;
  mask.kw = kw;
  mask.cells.assign(static_cast<std::size_t>(kh) * kw, 0);
  for (int di = -(kh / 2); di <= kh / 2; ++di) {
    for (int dj = -(kw / 2); dj <= kw / 2; ++dj) {
      bool active;
      if (dj == 0) {
        active = di == 0;
      } else {
        double at = dj - 0.5, bt = dj + 0.5;
        double ax = di - 0.5, bx = di + 0.5;
        active = line_hits_box(-s_w, at, bt, ax, bx) || cone_hits_box(s_min, s_max, at, bt, ax, bx);
      }
      if (active)
        mask.cells[static_cast<std::size_t>(di + kh / 2) * kw + (dj + kw / 2)] = 1;
    }
  }
  return mask;
}

} // namespace tse
