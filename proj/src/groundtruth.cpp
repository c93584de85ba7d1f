#include "tse/groundtruth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tse {

void validate_interpolation_params(const InterpolationParams& params) {
  if (!(params.v_max_kmph > 0.0))
    throw std::invalid_argument("interpolation: v_max must be positive");
  if (!(params.l_up_m > 0.0) || !(params.l_dn_m > 0.0))
    throw std::invalid_argument("interpolation: influence reaches must be positive");
}

double interp_speed(const std::optional<NeighborObs>& up, const std::optional<NeighborObs>& dn,
                    const InterpolationParams& params) {
  bool has_up = up && up->distance_m < params.l_up_m;
  bool has_dn = dn && dn->distance_m < params.l_dn_m;
  if (has_up && has_dn) {
    double d_up = up->distance_m, d_dn = dn->distance_m;
    if (d_up + d_dn <= 0.0) return up->v_kmph;
    double w = d_dn / (d_up + d_dn);
    return w * up->v_kmph + (1.0 - w) * dn->v_kmph;
  }
  if (has_up) {
    double w = 1.0 - up->distance_m / params.l_up_m;
    return w * up->v_kmph + (1.0 - w) * params.v_max_kmph;
  }
  if (has_dn) {
    double w = 1.0 - dn->distance_m / params.l_dn_m;
    return w * dn->v_kmph + (1.0 - w) * params.v_max_kmph;
  }
  return params.v_max_kmph;
}

namespace {

struct VehicleState {
  double x_m;
  double v_kmph;
};

/// Positions and speeds of all vehicles present at time t, sorted by x.
std::vector<VehicleState> states_at(std::span<const Trajectory> trajectories, double t_s) {
  std::vector<VehicleState> states;
  for (const auto& traj : trajectories) {
    const auto& s = traj.samples;
    if (s.empty() || t_s < s.front().t_s || t_s > s.back().t_s) continue;
    auto it = std::lower_bound(s.begin(), s.end(), t_s,
                               [](const TrajectorySample& a, double t) { return a.t_s < t; });
    if (it == s.begin() || it->t_s == t_s) {
      states.push_back({it->x_m, it->v_kmph});
    } else {
      const auto& b = *it;
      const auto& a = *(it - 1);
      double w = (t_s - a.t_s) / (b.t_s - a.t_s);
      states.push_back({a.x_m + w * (b.x_m - a.x_m), a.v_kmph + w * (b.v_kmph - a.v_kmph)});
    }
  }
  std::sort(states.begin(), states.end(),
            [](const VehicleState& a, const VehicleState& b) { return a.x_m < b.x_m; });
  return states;
}

} // namespace

SpeedField interpolate_speed_field(std::span<const Trajectory> trajectories,
                                   const SpaceTimeGrid& grid, const InterpolationParams& params) {
  validate_grid(grid);
  validate_interpolation_params(params);

  SpeedField field = SpeedField::zeros(grid);
  for (int j = 0; j < grid.nt; ++j) {
    double t = grid.cell_center_t(j);
    std::vector<VehicleState> states = states_at(trajectories, t);

    for (int i = 0; i < grid.nx; ++i) {
      double x = grid.cell_center_x(i);
      auto it = std::lower_bound(states.begin(), states.end(), x,
                                 [](const VehicleState& s, double q) { return s.x_m < q; });
      std::optional<NeighborObs> up, dn;
      if (it != states.end()) dn = NeighborObs{it->x_m - x, it->v_kmph};
      // A vehicle exactly at the query point also serves as the upstream
      // neighbor, making the rule exact there.
      if (it != states.end() && it->x_m == x) {
        up = dn;
      } else if (it != states.begin()) {
        const auto& s = *(it - 1);
        up = NeighborObs{x - s.x_m, s.v_kmph};
      }
      field.at(i, j) = interp_speed(up, dn, params);
    }

    for (const auto& s : states) {
      if (s.v_kmph != 0.0) continue;
      double fi = std::floor((s.x_m - grid.x0_m) / grid.dx_m);
      if (fi >= 0.0 && fi < grid.nx) field.at(static_cast<int>(fi), j) = 0.0;
    }
  }
  return field;
}

} // namespace tse
