#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tse {

/// Characteristic wave speeds bounding how traffic information propagates.
/// Free-flow disturbances move downstream at speeds in [c_v_min, c_v_max];
/// congested disturbances move upstream at c_w.
struct WaveParams {
  double c_v_max_kmph = 100.0;
  double c_v_min_kmph = 60.0;
  double c_w_kmph = 18.0;
};

/// Throws std::invalid_argument unless c_v_max >= c_v_min > 0 and c_w > 0.
void validate_wave_params(const WaveParams& waves);

/// Binary stencil over kernel offsets. Offset (di, dj) means di cells
/// downstream in space and dj cells forward in time relative to the kernel
/// center. Both kernel dimensions are odd.
struct KernelMask {
  int kh = 1; ///< space extent
  int kw = 1; ///< time extent
  std::vector<std::uint8_t> cells; ///< kh * kw, row (di + kh/2), col (dj + kw/2)

  bool at(int di, int dj) const {
    return cells[static_cast<std::size_t>(di + kh / 2) * kw + (dj + kw / 2)] != 0;
  }
  int cardinality() const;

  /// ASCII picture, space increasing upward, time increasing rightward.
  std::string render() const;

  bool operator==(const KernelMask&) const = default;
};

/// All offsets active (a conventional unconstrained kernel).
KernelMask build_isotropic_mask(int kh, int kw);

/// Active offsets are those reachable from the kernel center along a
/// physically admissible wave path, evaluated on a grid with the given cell
/// size. An offset cell (closed box in the (time, space) plane, cell units)
/// is active when it either
///   - meets the upstream-moving wave line x = -s_w * t, or
///   - meets the downstream cone s_min * t <= x <= s_max * t (t and x of
///     equal sign),
/// where s_w, s_min, s_max are the wave speeds converted to cells of space
/// per cell of time. Boundary touches count as meeting (closed geometry,
/// with a 1e-9 tolerance so exact corner contacts are kept regardless of
/// rounding). Offsets at zero time lag other than the center itself are
/// never active: with no time separation there is no wave path between
/// distinct locations. The center is always active.
KernelMask build_anisotropic_mask(int kh, int kw, const WaveParams& waves, double dx_m,
                                  double dt_s);

} // namespace tse
