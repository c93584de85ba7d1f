#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tse {

/// Uniform space-time lattice over a freeway section. Space is measured in
/// meters along the direction of travel, time in seconds. Cell (i, j) covers
/// the half-open box [x0 + i*dx, x0 + (i+1)*dx) x [t0 + j*dt, t0 + (j+1)*dt).
struct SpaceTimeGrid {
  double x0_m = 0.0;
  double t0_s = 0.0;
  double dx_m = 10.0;
  double dt_s = 1.0;
  int nx = 0; ///< number of space cells
  int nt = 0; ///< number of time cells

  double x_end_m() const { return x0_m + nx * dx_m; }
  double t_end_s() const { return t0_s + nt * dt_s; }
  double cell_center_x(int i) const { return x0_m + (i + 0.5) * dx_m; }
  double cell_center_t(int j) const { return t0_s + (j + 0.5) * dt_s; }
  std::int64_t cell_count() const { return static_cast<std::int64_t>(nx) * nt; }

  bool operator==(const SpaceTimeGrid&) const = default;
};

/// Throws std::invalid_argument unless dx, dt > 0 and nx, nt >= 1.
void validate_grid(const SpaceTimeGrid& grid);

struct CellIndex {
  int i = 0; ///< space index
  int j = 0; ///< time index
  bool operator==(const CellIndex&) const = default;
};

/// Maps a (t, x) point to its cell, or nullopt when the point lies outside
/// the grid domain. Out-of-domain is a value, not an error.
std::optional<CellIndex> cell_of(const SpaceTimeGrid& grid, double t_s, double x_m);

struct TrajectorySample {
  double t_s = 0.0;
  double x_m = 0.0;
  double v_kmph = 0.0;
};

/// One vehicle's sampled motion. Valid trajectories have strictly increasing
/// time, non-decreasing position (one-directional road) and speeds >= 0.
struct Trajectory {
  std::string vehicle_id;
  std::vector<TrajectorySample> samples;
};

/// Throws std::runtime_error naming the vehicle on any invariant violation.
void validate_trajectory(const Trajectory& traj);

/// Dense per-cell speed values in kmph, space-major layout.
struct SpeedField {
  SpaceTimeGrid grid;
  std::vector<double> values; ///< grid.nx * grid.nt entries, index i * nt + j

  static SpeedField zeros(const SpaceTimeGrid& grid);

  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * grid.nt + j]; }
  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * grid.nt + j]; }
};

/// Checks shape consistency and that every value is finite and >= 0.
/// Values above cap_kmph also fail (default chosen well above any plausible
/// freeway speed).
void validate_speed_field(const SpeedField& field, double cap_kmph = 130.0);

// --- trajectory CSV interchange ------------------------------------------

/// Reads `vehicle_id,t_s,x_m,v_kmph` rows. Rows of one vehicle may be
/// interleaved with other vehicles but must appear in increasing time order.
/// Vehicles are returned in order of first appearance. Malformed rows raise
/// std::runtime_error with the 1-based line number.
std::vector<Trajectory> read_trajectories_csv(const std::filesystem::path& path);

void write_trajectories_csv(std::span<const Trajectory> trajectories,
                            const std::filesystem::path& path);

// --- generalized flow/density over a region ------------------------------

/// Closed rectangle in the (t, x) plane, t2 > t1 and x2 > x1.
struct Region {
  double t1_s = 0.0, t2_s = 0.0;
  double x1_m = 0.0, x2_m = 0.0;
};

struct FlowDensity {
  double q_veh_per_hr = 0.0;
  double k_veh_per_km = 0.0;
};

/// Generalized definitions: flow = total distance traveled inside the region
/// divided by its area, density = total time spent inside divided by its
/// area. Trajectories are treated as piecewise linear between samples.
FlowDensity edie_flow_density(std::span<const Trajectory> trajectories, const Region& region);

} // namespace tse
