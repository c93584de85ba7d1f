#include "tse/microsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <stdexcept>
#include <unordered_map>

#include "tse/random.hpp"
#include "tse/units.hpp"

namespace tse {

void validate_driver_params(const DriverParams& d) {
  bool ok = d.v_desired_lo_kmph > 0.0 && d.v_desired_hi_kmph >= d.v_desired_lo_kmph &&
            d.a_max_mps2 > 0.0 && d.b_comf_mps2 > 0.0 && d.t_headway_s > 0.0 && d.s0_m > 0.0 &&
            d.vehicle_length_m > 0.0;
  if (!ok) throw std::invalid_argument("driver params: all fields must be positive, lo <= hi");
  if (!(d.reaction_delay_s >= 0.0 && d.reaction_delay_s <= 5.0))
    throw std::invalid_argument("driver params: reaction delay must be in [0, 5] s");
}

double idm_acceleration_mps2(double v_mps, double v_desired_mps,
                             const std::optional<LeaderObs>& leader, const DriverParams& d) {
  double ratio = v_mps / v_desired_mps;
  double free_term = ratio * ratio * ratio * ratio;
  double interaction = 0.0;
  if (leader) {
    double dv = v_mps - leader->v_mps;
    double s_star = d.s0_m + std::max(0.0, v_mps * d.t_headway_s +
                                               v_mps * dv /
                                                   (2.0 * std::sqrt(d.a_max_mps2 * d.b_comf_mps2)));
    double s = std::max(leader->gap_m, 0.1);
    interaction = (s_star / s) * (s_star / s);
  }
  return d.a_max_mps2 * (1.0 - free_term - interaction);
}

namespace {

constexpr int kQueueCap = 200;

struct Arrival {
  double t_s;
  double v_desired_mps;
};

struct ActiveVehicle {
  int traj_index;
  double x_m; ///< front bumper
  double v_mps;
  double v_desired_mps;
};

double demand_at(const std::vector<DemandStep>& demand, double t_s) {
  double rate = 0.0;
  for (const auto& step : demand) {
    if (step.t_start_s > t_s) break;
    rate = step.inflow_veh_hr;
  }
  return rate;
}

/// Poisson arrivals over [0, duration) following share * profile, by
/// thinning a homogeneous process at the profile peak. Desired speeds are
/// drawn from the same stream at acceptance time.
std::vector<Arrival> generate_arrivals(const std::vector<DemandStep>& demand, double share,
                                       double duration_s, const DriverParams& drivers,
                                       RngEngine rng) {
  double peak = 0.0;
  for (const auto& step : demand) peak = std::max(peak, step.inflow_veh_hr);
  double rate_max = share * peak / 3600.0;
  std::vector<Arrival> arrivals;
  if (rate_max <= 0.0) return arrivals;
  double t = 0.0;
  while (true) {
    t += exponential(rng, rate_max);
    if (t >= duration_s) break;
    double rate = share * demand_at(demand, t) / 3600.0;
    if (uniform01(rng) * rate_max < rate) {
      double v0 =
          kmph_to_mps(uniform(rng, drivers.v_desired_lo_kmph, drivers.v_desired_hi_kmph));
      arrivals.push_back({t, v0});
    }
  }
  return arrivals;
}

void validate_scenario(const DemandScenario& sc, double section_length_m, double step_s) {
  if (!(section_length_m > 0.0)) throw std::invalid_argument("simulate: section length must be positive");
  if (!(step_s > 0.0)) throw std::invalid_argument("simulate: step must be positive");
  if (!(sc.duration_s >= 0.0)) throw std::invalid_argument("simulate: duration must be non-negative");
  if (sc.demand.empty()) throw std::invalid_argument("simulate: demand profile is empty");
  for (std::size_t k = 0; k < sc.demand.size(); ++k) {
    const auto& step = sc.demand[k];
    if (!std::isfinite(step.inflow_veh_hr) || step.inflow_veh_hr < 0.0)
      throw std::invalid_argument("simulate: demand rates must be finite and non-negative");
    if (k == 0 && step.t_start_s < 0.0)
      throw std::invalid_argument("simulate: demand must start at t >= 0");
    if (k > 0 && !(step.t_start_s > sc.demand[k - 1].t_start_s))
      throw std::invalid_argument("simulate: demand steps must have increasing start times");
  }
  if (!(sc.ramp_inflow_fraction >= 0.0 && sc.ramp_inflow_fraction < 1.0))
    throw std::invalid_argument("simulate: ramp fraction must be in [0, 1)");
  if (sc.ramp_inflow_fraction > 0.0 &&
      !(sc.ramp_position_m > 0.0 && sc.ramp_position_m < section_length_m))
    throw std::invalid_argument("simulate: ramp position must lie inside the section");
}

} // namespace

std::vector<Trajectory> simulate(const DemandScenario& scenario, double section_length_m,
                                 const DriverParams& drivers, double step_s, SimStats* stats) {
  validate_scenario(scenario, section_length_m, step_s);
  validate_driver_params(drivers);

  double f = scenario.ramp_inflow_fraction;
  std::vector<Arrival> mainline = generate_arrivals(scenario.demand, 1.0 - f, scenario.duration_s,
                                                    drivers, seeded_stream(scenario.seed, 1));
  std::vector<Arrival> ramp = generate_arrivals(scenario.demand, f, scenario.duration_s, drivers,
                                                seeded_stream(scenario.seed, 2));

  std::vector<Trajectory> trajectories(mainline.size() + ramp.size());
  char id[16];
  for (std::size_t k = 0; k < mainline.size(); ++k) {
    std::snprintf(id, sizeof(id), "m%05zu", k);
    trajectories[k].vehicle_id = id;
  }
  for (std::size_t k = 0; k < ramp.size(); ++k) {
    std::snprintf(id, sizeof(id), "r%05zu", k);
    trajectories[mainline.size() + k].vehicle_id = id;
  }

  SimStats local_stats;
  SimStats& st = stats ? *stats : local_stats;
  st = SimStats{};

  std::vector<ActiveVehicle> road; // ascending x; leader of [k] is [k+1]
  std::size_t next_main = 0, next_ramp = 0;
  std::vector<Arrival> ramp_queue;
  const double len = drivers.vehicle_length_m;
  const double s0 = drivers.s0_m;
  const double T = drivers.t_headway_s;
  const int delay_steps = static_cast<int>(std::lround(drivers.reaction_delay_s / step_s));
  std::deque<std::unordered_map<int, std::pair<double, double>>> state_log;

  auto record = [&](const ActiveVehicle& veh, double t_s) {
    if (veh.x_m < 0.0 || veh.x_m > section_length_m) return;
    trajectories[veh.traj_index].samples.push_back(
        {t_s, veh.x_m, mps_to_kmph(veh.v_mps)});
  };

  long n_steps = std::lround(std::ceil(scenario.duration_s / step_s));
  for (long k = 0; k < n_steps; ++k) {
    double t = k * step_s;

    // Mainline entry at x = 0. Arrivals past their time wait in an implicit
    // queue; beyond the cap they are dropped and counted.
    while (next_main < mainline.size() && mainline[next_main].t_s <= t) {
      std::size_t waiting = 0;
      for (std::size_t q = next_main; q < mainline.size() && mainline[q].t_s <= t; ++q) ++waiting;
      const Arrival& arr = mainline[next_main];
      bool can_enter = true;
      double v_entry = arr.v_desired_mps;
      if (!road.empty()) {
        double gap = road.front().x_m - len;
        if (gap < s0 + 1.0) can_enter = false;
        v_entry = std::min(v_entry, std::max(0.0, (gap - s0) / T));
      }
      if (can_enter) {
        ActiveVehicle veh{static_cast<int>(next_main), 0.0, v_entry, arr.v_desired_mps};
        road.insert(road.begin(), veh);
        record(veh, t);
        ++st.spawned_mainline;
        ++next_main;
      } else if (waiting > kQueueCap) {
        ++st.dropped_mainline;
        ++next_main;
      } else {
        break;
      }
    }

    // Ramp merge: the head of the ramp queue enters the first step in which
    // both neighbor gaps at the ramp position are safe.
    while (next_ramp < ramp.size() && ramp[next_ramp].t_s <= t) {
      ramp_queue.push_back(ramp[next_ramp]);
      ++next_ramp;
    }
    while (ramp_queue.size() > static_cast<std::size_t>(kQueueCap)) {
      ramp_queue.erase(ramp_queue.begin());
      ++st.dropped_ramp;
    }
    if (!ramp_queue.empty()) {
      double x_r = scenario.ramp_position_m;
      auto it = std::lower_bound(road.begin(), road.end(), x_r,
                                 [](const ActiveVehicle& v, double x) { return v.x_m < x; });
      const ActiveVehicle* leader = it != road.end() ? &*it : nullptr;
      const ActiveVehicle* follower = it != road.begin() ? &*(it - 1) : nullptr;
      const Arrival& arr = ramp_queue.front();
      double v_entry = arr.v_desired_mps;
      if (leader) v_entry = std::min(v_entry, leader->v_mps + 2.0);
      bool lead_ok = !leader || leader->x_m - len - x_r >= s0 + 0.5 * v_entry * T;
      bool foll_ok = !follower || x_r - len - follower->x_m >= s0 + 0.5 * follower->v_mps * T;
      if (lead_ok && foll_ok) {
        int traj_index = static_cast<int>(mainline.size() + (next_ramp - ramp_queue.size()));
        ActiveVehicle veh{traj_index, x_r, v_entry, arr.v_desired_mps};
        auto pos = road.insert(it, veh);
        record(*pos, t);
        ++st.spawned_ramp;
        ramp_queue.erase(ramp_queue.begin());
      }
    }

    // Accelerations from the perceived state, then explicit Euler. With a
    // reaction delay the acceleration inputs (own speed, gap, closing speed)
    // come from the snapshot delay_steps back; vehicles younger than the
    // delay fall back to the current state.
    if (delay_steps > 0) {
      state_log.emplace_back();
      auto& snap = state_log.back();
      snap.reserve(road.size());
      for (const auto& veh : road) snap.emplace(veh.traj_index, std::pair{veh.x_m, veh.v_mps});
      if (state_log.size() > static_cast<std::size_t>(delay_steps) + 1) state_log.pop_front();
    }
    const auto* past = state_log.size() == static_cast<std::size_t>(delay_steps) + 1
                           ? &state_log.front()
                           : nullptr;
    std::vector<double> acc(road.size());
    for (std::size_t idx = 0; idx < road.size(); ++idx) {
      double v_self = road[idx].v_mps;
      std::optional<LeaderObs> leader;
      if (idx + 1 < road.size()) {
        double gap = road[idx + 1].x_m - len - road[idx].x_m;
        double v_lead = road[idx + 1].v_mps;
        if (past) {
          auto self_it = past->find(road[idx].traj_index);
          auto lead_it = past->find(road[idx + 1].traj_index);
          if (self_it != past->end() && lead_it != past->end()) {
            v_self = self_it->second.second;
            v_lead = lead_it->second.second;
            gap = lead_it->second.first - len - self_it->second.first;
          }
        }
        leader = LeaderObs{gap, v_lead};
      } else if (past) {
        auto self_it = past->find(road[idx].traj_index);
        if (self_it != past->end()) v_self = self_it->second.second;
      }
      acc[idx] = idm_acceleration_mps2(v_self, road[idx].v_desired_mps, leader, drivers);
    }
    for (std::size_t idx = 0; idx < road.size(); ++idx) {
      road[idx].x_m += road[idx].v_mps * step_s;
      road[idx].v_mps = std::max(0.0, road[idx].v_mps + acc[idx] * step_s);
    }

    // Hard no-overlap guarantee, front to back.
    for (std::size_t r = road.size(); r >= 2; --r) {
      ActiveVehicle& foll = road[r - 2];
      ActiveVehicle& lead = road[r - 1];
      if (foll.x_m > lead.x_m - len) {
        foll.x_m = lead.x_m - len;
        foll.v_mps = std::min(foll.v_mps, lead.v_mps);
        ++st.safety_clamps;
      }
    }

    double t_next = (k + 1) * step_s;
    for (const auto& veh : road) record(veh, t_next);
    std::erase_if(road, [&](const ActiveVehicle& veh) {
      return veh.x_m > section_length_m + len + 10.0;
    });
  }

  std::erase_if(trajectories, [](const Trajectory& traj) { return traj.samples.empty(); });
  for (const auto& traj : trajectories) validate_trajectory(traj);
  return trajectories;
}

std::vector<Trajectory> record_section(std::span<const Trajectory> trajectories, double x_start_m,
                                       double x_end_m) {
  if (!(x_end_m > x_start_m))
    throw std::invalid_argument("record_section: empty space interval");
  std::vector<Trajectory> out;
  for (const auto& traj : trajectories) {
    Trajectory clipped;
    clipped.vehicle_id = traj.vehicle_id;
    for (const auto& s : traj.samples)
      if (s.x_m >= x_start_m && s.x_m <= x_end_m) clipped.samples.push_back(s);
    if (!clipped.samples.empty()) out.push_back(std::move(clipped));
  }
  return out;
}

} // namespace tse
