#pragma once

#include <optional>
#include <span>

#include "tse/grid.hpp"

namespace tse {

/// Parameters for filling a dense speed field from vehicle trajectories.
/// A cell takes its speed from the nearest vehicles upstream and downstream
/// of the cell center at the column's center time; l_up and l_dn bound how
/// far that influence reaches, and v_max is the speed assumed where no
/// vehicle is near.
struct InterpolationParams {
  double v_max_kmph = 95.0;
  double l_up_m = 80.0; ///< influence reach of the nearest upstream vehicle
  double l_dn_m = 40.0; ///< influence reach of the nearest downstream vehicle
};

/// Throws std::invalid_argument unless v_max > 0, l_up > 0 and l_dn > 0.
void validate_interpolation_params(const InterpolationParams& params);

/// Nearest-vehicle observation relative to a query point.
struct NeighborObs {
  double distance_m = 0.0; ///< non-negative distance to the query point
  double v_kmph = 0.0;
};

/// Point rule for one query location. A neighbor takes part only when its
/// distance is within the corresponding reach; the four present/absent
/// combinations blend linearly:
///   - both:      w = d_dn / (d_up + d_dn),   V = w*V_up + (1-w)*V_dn
///   - up only:   w = 1 - d_up / l_up,        V = w*V_up + (1-w)*v_max
///   - down only: w = 1 - d_dn / l_dn,        V = w*V_dn + (1-w)*v_max
///   - neither:   V = v_max
/// The result is continuous in the distances and exact at a vehicle position.
double interp_speed(const std::optional<NeighborObs>& up, const std::optional<NeighborObs>& dn,
                    const InterpolationParams& params);

/// Fills every cell of the grid by applying the point rule at the cell
/// center, with vehicle positions and speeds linearly interpolated to the
/// column's center time. A cell whose column time finds a stopped vehicle
/// (v = 0) inside the cell is forced to exactly 0.
SpeedField interpolate_speed_field(std::span<const Trajectory> trajectories,
                                   const SpaceTimeGrid& grid, const InterpolationParams& params);

} // namespace tse
