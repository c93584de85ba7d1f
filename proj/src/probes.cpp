#include "tse/probes.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tse/random.hpp"

namespace tse {

std::vector<Trajectory> sample_probes(std::span<const Trajectory> trajectories, double rate,
                                      std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0))
    throw std::invalid_argument("probe penetration rate must be in [0, 1]");
  RngEngine rng(seed);
  std::vector<Trajectory> probes;
  for (const auto& traj : trajectories)
    if (uniform01(rng) < rate) probes.push_back(traj);
  return probes;
}

ProbeInputTensor encode_input(std::span<const Trajectory> probes, const SpaceTimeGrid& grid,
                              double v_scale_kmph) {
  validate_grid(grid);
  if (!(v_scale_kmph > 0.0))
    throw std::invalid_argument("encode_input: v_scale must be positive");

  std::size_t n = static_cast<std::size_t>(grid.cell_count());
  std::vector<double> sum(n, 0.0);
  std::vector<std::uint32_t> count(n, 0);
  for (const auto& traj : probes) {
    for (const auto& s : traj.samples) {
      auto cell = cell_of(grid, s.t_s, s.x_m);
      if (!cell) continue;
      std::size_t idx = static_cast<std::size_t>(cell->i) * grid.nt + cell->j;
      sum[idx] += s.v_kmph;
      count[idx] += 1;
    }
  }

  ProbeInputTensor input;
  input.grid = grid;
  input.v_scale_kmph = v_scale_kmph;
  input.channels.assign(3 * n, 0);
  for (std::size_t idx = 0; idx < n; ++idx) {
    if (count[idx] == 0) continue;
    double u = std::clamp(sum[idx] / count[idx] / v_scale_kmph, 0.0, 1.0);
    auto level = static_cast<std::uint8_t>(std::llround(254.0 * u));
    input.channels[idx] = static_cast<std::uint8_t>(1 + level);
    input.channels[n + idx] = static_cast<std::uint8_t>(255 - level);
    input.channels[2 * n + idx] = 128;
  }
  return input;
}

} // namespace tse
