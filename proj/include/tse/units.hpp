#pragma once

namespace tse {

constexpr double kmph_to_mps(double v_kmph) { return v_kmph / 3.6; }
constexpr double mps_to_kmph(double v_mps) { return v_mps * 3.6; }

} // namespace tse
