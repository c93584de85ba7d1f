#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tse/grid.hpp"

namespace tse {

/// Sparse probe observations rasterized to a 3-channel byte image over a
/// grid, channel-first layout (c, i, j). Channel semantics on occupied
/// cells, with u = clamp(mean probe speed / v_scale, 0, 1):
///   channel 0: 1 + round(254 * u)    (never 0, so it doubles as occupancy)
///   channel 1: 255 - round(254 * u)
///   channel 2: 128
/// Unoccupied cells are (0, 0, 0). Occupied cells satisfy c0 + c1 == 256.
struct ProbeInputTensor {
  SpaceTimeGrid grid;
  double v_scale_kmph = 128.0;
  std::vector<std::uint8_t> channels; ///< 3 * nx * nt entries

  std::uint8_t at(int c, int i, int j) const {
    return channels[(static_cast<std::size_t>(c) * grid.nx + i) * grid.nt + j];
  }
  bool occupied(int i, int j) const { return at(0, i, j) != 0; }
};

/// Keeps each vehicle independently with the given probability (the probe
/// penetration rate), preserving input order. Deterministic in the seed.
/// Throws std::invalid_argument unless 0 <= rate <= 1.
std::vector<Trajectory> sample_probes(std::span<const Trajectory> trajectories, double rate,
                                      std::uint64_t seed);

/// Rasterizes probe trajectory samples: every sample falling in a grid cell
/// contributes its speed to that cell's mean. Samples outside the grid are
/// ignored. v_scale must be positive.
ProbeInputTensor encode_input(std::span<const Trajectory> probes, const SpaceTimeGrid& grid,
                              double v_scale_kmph = 128.0);

} // namespace tse
