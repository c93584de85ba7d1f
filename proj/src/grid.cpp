#include "tse/grid.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace tse {

void validate_grid(const SpaceTimeGrid& grid) {
  if (!(grid.dx_m > 0.0) || !(grid.dt_s > 0.0))
    throw std::invalid_argument("grid: dx and dt must be positive");
  if (grid.nx < 1 || grid.nt < 1)
    throw std::invalid_argument("grid: nx and nt must be at least 1");
  if (!std::isfinite(grid.x0_m) || !std::isfinite(grid.t0_s))
    throw std::invalid_argument("grid: origin must be finite");
}

std::optional<CellIndex> cell_of(const SpaceTimeGrid& grid, double t_s, double x_m) {
  double fi = std::floor((x_m - grid.x0_m) / grid.dx_m);
  double fj = std::floor((t_s - grid.t0_s) / grid.dt_s);
  if (fi < 0.0 || fj < 0.0 || fi >= grid.nx || fj >= grid.nt) return std::nullopt;
  return CellIndex{static_cast<int>(fi), static_cast<int>(fj)};
}

void validate_trajectory(const Trajectory& traj) {
  const auto& s = traj.samples;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (!std::isfinite(s[k].t_s) || !std::isfinite(s[k].x_m) || !std::isfinite(s[k].v_kmph))
      throw std::runtime_error("trajectory " + traj.vehicle_id + ": non-finite sample");
    if (s[k].v_kmph < 0.0)
      throw std::runtime_error("trajectory " + traj.vehicle_id + ": negative speed");
    if (k > 0) {
      if (!(s[k].t_s > s[k - 1].t_s))
        throw std::runtime_error("trajectory " + traj.vehicle_id + ": non-monotonic time");
      if (s[k].x_m < s[k - 1].x_m - 1e-9)
        throw std::runtime_error("trajectory " + traj.vehicle_id + ": decreasing position");
    }
  }
}

SpeedField SpeedField::zeros(const SpaceTimeGrid& grid) {
  validate_grid(grid);
  SpeedField f;
  f.grid = grid;
  f.values.assign(static_cast<std::size_t>(grid.cell_count()), 0.0);
  return f;
}

void validate_speed_field(const SpeedField& field, double cap_kmph) {
  validate_grid(field.grid);
  if (field.values.size() != static_cast<std::size_t>(field.grid.cell_count()))
    throw std::runtime_error("speed field: value count does not match grid shape");
  for (double v : field.values) {
    if (!std::isfinite(v)) throw std::runtime_error("speed field: non-finite value");
    if (v < 0.0) throw std::runtime_error("speed field: negative speed");
    if (v > cap_kmph) throw std::runtime_error("speed field: speed above cap");
  }
}

namespace {

const char* kCsvHeader = "vehicle_id,t_s,x_m,v_kmph";

double parse_double(std::string_view text, const std::filesystem::path& path, std::size_t line) {
  double out = 0.0;
  auto begin = text.data();
  auto end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc{} || ptr != end)
    throw std::runtime_error(path.string() + ":" + std::to_string(line) +
                             ": bad numeric field '" + std::string(text) + "'");
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

} // namespace

std::vector<Trajectory> read_trajectories_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory file: " + path.string());

  std::vector<Trajectory> trajectories;
  std::unordered_map<std::string, std::size_t> index_of;

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line))
    throw std::runtime_error(path.string() + ": empty file, expected header");
  ++line_no;
  if (trim(line) != kCsvHeader)
    throw std::runtime_error(path.string() + ":1: expected header '" + kCsvHeader + "'");

  while (std::getline(in, line)) {
    ++line_no;
    std::string_view row = trim(line);
    if (row.empty()) continue;

    std::array<std::string_view, 4> fields;
    std::size_t field_count = 0;
    while (field_count < 4) {
      std::size_t comma = row.find(',');
      fields[field_count++] = trim(row.substr(0, comma));
      if (comma == std::string_view::npos) break;
      row.remove_prefix(comma + 1);
    }
    if (field_count != 4 || fields[3].find(',') != std::string_view::npos)
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected 4 comma-separated fields");
    if (fields[0].empty())
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": empty vehicle_id");

    TrajectorySample sample;
    sample.t_s = parse_double(fields[1], path, line_no);
    sample.x_m = parse_double(fields[2], path, line_no);
    sample.v_kmph = parse_double(fields[3], path, line_no);
    if (sample.v_kmph < 0.0)
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": negative speed");

    std::string id(fields[0]);
    auto [it, inserted] = index_of.try_emplace(id, trajectories.size());
    if (inserted) trajectories.push_back(Trajectory{std::move(id), {}});
    Trajectory& traj = trajectories[it->second];
    if (!traj.samples.empty() && !(sample.t_s > traj.samples.back().t_s))
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": non-monotonic time for vehicle " + traj.vehicle_id);
    traj.samples.push_back(sample);
  }

  for (const auto& traj : trajectories) validate_trajectory(traj);
  return trajectories;
}

void write_trajectories_csv(std::span<const Trajectory> trajectories,
                            const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trajectory file: " + path.string());
  out << kCsvHeader << '\n';
  char buf[128];
  for (const auto& traj : trajectories) {
    for (const auto& s : traj.samples) {
      std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%.10g", traj.vehicle_id.c_str(), s.t_s,
                    s.x_m, s.v_kmph);
      out << buf << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

FlowDensity edie_flow_density(std::span<const Trajectory> trajectories, const Region& region) {
  if (!(region.t2_s > region.t1_s) || !(region.x2_m > region.x1_m))
    throw std::invalid_argument("edie region must have positive extent");

  double total_distance_m = 0.0;
  double total_time_s = 0.0;
  for (const auto& traj : trajectories) {
    const auto& s = traj.samples;
    for (std::size_t k = 0; k + 1 < s.size(); ++k) {
      double ta = s[k].t_s, tb = s[k + 1].t_s;
      double xa = s[k].x_m, xb = s[k + 1].x_m;
      if (tb <= ta) continue;
      // Fraction of the segment (in its own parameterization) inside the
      // region; both t and x are monotone along the segment.
      double lo = 0.0, hi = 1.0;
      lo = std::max(lo, (region.t1_s - ta) / (tb - ta));
      hi = std::min(hi, (region.t2_s - ta) / (tb - ta));
      if (xb > xa) {
        lo = std::max(lo, (region.x1_m - xa) / (xb - xa));
        hi = std::min(hi, (region.x2_m - xa) / (xb - xa));
      } else if (xa < region.x1_m || xa > region.x2_m) {
        continue;
      }
      if (hi <= lo) continue;
      total_distance_m += (hi - lo) * (xb - xa);
      total_time_s += (hi - lo) * (tb - ta);
    }
  }

  double area = (region.t2_s - region.t1_s) * (region.x2_m - region.x1_m); // m*s
  FlowDensity fd;
  fd.q_veh_per_hr = total_distance_m / area * 3600.0;
  fd.k_veh_per_km = total_time_s / area * 1000.0;
  return fd;
}

} // namespace tse
