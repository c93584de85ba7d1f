#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tse/grid.hpp"

namespace tse {

/// Car-following driver population. Each vehicle draws its desired speed
/// uniformly from [v_desired_lo, v_desired_hi]; the remaining parameters are
/// shared: maximum acceleration, comfortable braking, safe time headway,
/// standstill gap, vehicle length, and perception delay. A zero delay reacts
/// to the current state; a positive delay feeds the car-following response
/// from the state reaction_delay seconds ago (rounded to whole steps), which
/// lets dense traffic develop the stop-and-go oscillations a delay-free
/// model damps out.
struct DriverParams {
  double v_desired_lo_kmph = 60.0;
  double v_desired_hi_kmph = 100.0;
  double a_max_mps2 = 1.2;
  double b_comf_mps2 = 2.0;
  double t_headway_s = 1.2;
  double s0_m = 2.0;
  double vehicle_length_m = 5.0;
  double reaction_delay_s = 0.0;
};

void validate_driver_params(const DriverParams& drivers);

/// Leader as seen by a follower: net bumper-to-bumper gap and leader speed.
struct LeaderObs {
  double gap_m = 0.0;
  double v_mps = 0.0;
};

/// Intelligent-driver-model acceleration:
///   a = a_max * (1 - (v/v0)^4 - (s*/s)^2)
///   s* = s0 + max(0, v*T + v*(v - v_lead) / (2*sqrt(a_max*b_comf)))
/// Without a leader the interaction term vanishes. The gap is floored at a
/// small positive value so emergencies brake hard instead of dividing by
/// zero.
double idm_acceleration_mps2(double v_mps, double v_desired_mps,
                             const std::optional<LeaderObs>& leader, const DriverParams& drivers);

/// Piecewise-constant demand profile: inflow_veh_hr applies from t_start_s
/// until the next step (the last step extends to the end of the run).
/// Demand before the first step is zero.
struct DemandStep {
  double t_start_s = 0.0;
  double inflow_veh_hr = 0.0;
};

struct DemandScenario {
  std::vector<DemandStep> demand;
  double duration_s = 0.0;
  /// Share of total demand entering from an on-ramp at ramp_position_m;
  /// the rest enters at x = 0. Zero disables the ramp.
  double ramp_inflow_fraction = 0.0;
  double ramp_position_m = 0.0;
  std::uint64_t seed = 1;
};

struct SimStats {
  int spawned_mainline = 0;
  int spawned_ramp = 0;
  int dropped_mainline = 0; ///< arrivals discarded because the entry backlog hit its cap
  int dropped_ramp = 0;
  int safety_clamps = 0; ///< post-step interventions that prevented overlap
};

/// Single-lane simulation on [0, section_length]. Arrivals are Poisson
/// (thinned to the demand profile); mainline vehicles enter at x = 0 when
/// the entry gap is safe, ramp vehicles merge into the first safe gap at the
/// ramp position. Integration is explicit Euler with the given step and a
/// speed floor at zero. Vehicles interact only with their leader, so a
/// perturbation never propagates downstream. Deterministic in the scenario
/// seed; mainline and ramp randomness are independent streams, so the
/// mainline arrival sequence depends only on the mainline demand share,
/// never on the ramp position or the ramp draws.
/// Returns one trajectory per vehicle that entered (ids m#####, r#####),
/// sampled every step while inside the section.
std::vector<Trajectory> simulate(const DemandScenario& scenario, double section_length_m,
                                 const DriverParams& drivers, double step_s = 0.2,
                                 SimStats* stats = nullptr);

/// Keeps only samples with x in [x_start, x_end]; drops emptied vehicles.
std::vector<Trajectory> record_section(std::span<const Trajectory> trajectories, double x_start_m,
                                       double x_end_m);

} // namespace tse
