#include "tse/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace tse {

double rmse(const SpeedField& a, const SpeedField& b) {
  if (!(a.grid == b.grid)) throw std::invalid_argument("rmse: fields on different grids");
  double acc = 0.0;
  for (std::size_t k = 0; k < a.values.size(); ++k) {
    double d = a.values[k] - b.values[k];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.values.size()));
}

template <typename T>
std::vector<RegimeRmse> evaluate_by_regime(const nn::ConvModel<T>& model,
                                           std::span<const Sample> samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  std::vector<std::vector<double>> per_regime(3);
  std::vector<double> all;
  for (const auto& s : samples) {
    SpeedField pred = nn::infer(model, s.input);
    double r = rmse(pred, s.target);
    per_regime[static_cast<int>(s.regime)].push_back(r);
    all.push_back(r);
  }

  auto row = [](const std::string& label, const std::vector<double>& values) {
    RegimeRmse out;
    out.label = label;
    out.n_samples = static_cast<int>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    out.mean_rmse_kmph = mean;
    out.std_rmse_kmph = std::sqrt(var / static_cast<double>(values.size()));
    return out;
  };

  std::vector<RegimeRmse> rows;
  for (int r = 0; r < 3; ++r)
    if (!per_regime[r].empty())
      rows.push_back(row(regime_name(static_cast<Regime>(r)), per_regime[r]));
  rows.push_back(row("all", all));
  return rows;
}

template std::vector<RegimeRmse> evaluate_by_regime<float>(const nn::ConvModel<float>&,
                                                           std::span<const Sample>);
template std::vector<RegimeRmse> evaluate_by_regime<double>(const nn::ConvModel<double>&,
                                                            std::span<const Sample>);

std::optional<double> wave_speed_estimate_kmph(const SpeedField& field) {
  const SpaceTimeGrid& g = field.grid;
  if (g.nx < 8 || g.nt < 2) return std::nullopt;
  const int lag = std::min(g.nt - 1, 40);
  constexpr double kVarFloor = 1e-12;

  double best_score = -2.0;
  std::optional<double> best_speed;
  for (double c_kmph = -40.0; c_kmph <= 120.0 + 1e-9; c_kmph += 0.5) {
    // After `lag` columns a structure moving at c sits c*lag*dt/dx cells
    // further along space.
    double shift = c_kmph / 3.6 * (lag * g.dt_s) / g.dx_m;
    int i_lo = static_cast<int>(std::ceil(std::max(0.0, -shift)));
    int i_hi = static_cast<int>(std::floor(std::min<double>(g.nx - 1, g.nx - 1 - shift)));
    if (i_hi - i_lo + 1 < 8) continue;

    double score_sum = 0.0;
    int score_n = 0;
    for (int j = 0; j + lag < g.nt; ++j) {
      double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
      int n = 0;
      for (int i = i_lo; i <= i_hi; ++i) {
        double pos = i + shift;
        int p0 = static_cast<int>(std::floor(pos));
        double frac = pos - p0;
        int p1 = std::min(p0 + 1, g.nx - 1);
        double a = field.at(i, j);
        double b = (1.0 - frac) * field.at(p0, j + lag) + frac * field.at(p1, j + lag);
        sa += a;
        sb += b;
        saa += a * a;
        sbb += b * b;
        sab += a * b;
        ++n;
      }
      double va = saa - sa * sa / n;
      double vb = sbb - sb * sb / n;
      if (va < kVarFloor || vb < kVarFloor) continue;
      score_sum += (sab - sa * sb / n) / std::sqrt(va * vb);
      ++score_n;
    }
    if (score_n == 0) continue;
    double score = score_sum / score_n;
    if (score > best_score + 1e-12) {
      best_score = score;
      best_speed = c_kmph;
    }
  }
  return best_speed;
}

void export_field_csv(const SpeedField& field, const std::filesystem::path& path) {
  validate_grid(field.grid);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write field file: " + path.string());
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g,%.10g,%d,%d", field.grid.x0_m,
                field.grid.t0_s, field.grid.dx_m, field.grid.dt_s, field.grid.nx, field.grid.nt);
  out << buf << '\n';
  for (int i = 0; i < field.grid.nx; ++i) {
    for (int j = 0; j < field.grid.nt; ++j) {
      std::snprintf(buf, sizeof(buf), "%.10g", field.at(i, j));
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

namespace {

double parse_field_double(std::string_view text, const std::filesystem::path& path,
                          std::size_t line) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw std::runtime_error(path.string() + ":" + std::to_string(line) +
                             ": bad numeric field '" + std::string(text) + "'");
  return out;
}

std::vector<std::string_view> split_csv(std::string_view row) {
  std::vector<std::string_view> fields;
  while (true) {
    std::size_t comma = row.find(',');
    std::string_view f = row.substr(0, comma);
    while (!f.empty() && (f.back() == '\r' || f.back() == ' ')) f.remove_suffix(1);
    while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
    fields.push_back(f);
    if (comma == std::string_view::npos) break;
    row.remove_prefix(comma + 1);
  }
  return fields;
}

} // namespace

SpeedField import_field_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open field file: " + path.string());
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error(path.string() + ": empty file, expected grid header");
  auto header = split_csv(line);
  if (header.size() != 6)
    throw std::runtime_error(path.string() + ":1: expected x0,t0,dx,dt,nx,nt");
  SpaceTimeGrid grid;
  grid.x0_m = parse_field_double(header[0], path, 1);
  grid.t0_s = parse_field_double(header[1], path, 1);
  grid.dx_m = parse_field_double(header[2], path, 1);
  grid.dt_s = parse_field_double(header[3], path, 1);
  grid.nx = static_cast<int>(parse_field_double(header[4], path, 1));
  grid.nt = static_cast<int>(parse_field_double(header[5], path, 1));
  validate_grid(grid);

  SpeedField field = SpeedField::zeros(grid);
  for (int i = 0; i < grid.nx; ++i) {
    if (!std::getline(in, line))
      throw std::runtime_error(path.string() + ": truncated after " + std::to_string(i) +
                               " data rows");
    auto fields = split_csv(line);
    if (fields.size() != static_cast<std::size_t>(grid.nt))
      throw std::runtime_error(path.string() + ":" + std::to_string(i + 2) +
                               ": expected " + std::to_string(grid.nt) + " values");
    for (int j = 0; j < grid.nt; ++j)
      field.at(i, j) = parse_field_double(fields[j], path, i + 2);
  }
  return field;
}

void export_field_ppm(const SpeedField& field, const std::filesystem::path& path) {
  validate_grid(field.grid);
  struct Anchor {
    double t;
    double rgb[3];
  };
  static const Anchor ramp[] = {{0.00, {165, 0, 38}},
                                {0.25, {244, 109, 67}},
                                {0.50, {254, 224, 144}},
                                {0.75, {166, 217, 106}},
                                {1.00, {26, 152, 80}}};

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image file: " + path.string());
  out << "P6\n" << field.grid.nt << ' ' << field.grid.nx << "\n255\n";
  for (int r = 0; r < field.grid.nx; ++r) {
    int i = field.grid.nx - 1 - r;
    for (int j = 0; j < field.grid.nt; ++j) {
      double t = std::clamp(field.at(i, j) / 130.0, 0.0, 1.0);
      int seg = std::min(3, static_cast<int>(t / 0.25));
      double w = (t - ramp[seg].t) / 0.25;
      unsigned char px[3];
      for (int ch = 0; ch < 3; ++ch)
        px[ch] = static_cast<unsigned char>(
            std::llround(ramp[seg].rgb[ch] + w * (ramp[seg + 1].rgb[ch] - ramp[seg].rgb[ch])));
      out.write(reinterpret_cast<const char*>(px), 3);
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void export_flow_density_csv(std::span<const Trajectory> trajectories, const Region& region,
                             const TileSpec& tile, const std::filesystem::path& path) {
  if (!(tile.dx_m > 0.0) || !(tile.dt_s > 0.0))
    throw std::invalid_argument("flow/density tiles must have positive extent");
  if (!(region.t2_s > region.t1_s) || !(region.x2_m > region.x1_m))
    throw std::invalid_argument("flow/density region must have positive extent");
  int n_t = static_cast<int>(std::floor((region.t2_s - region.t1_s) / tile.dt_s + 1e-9));
  int n_x = static_cast<int>(std::floor((region.x2_m - region.x1_m) / tile.dx_m + 1e-9));
  if (n_t < 1 || n_x < 1)
    throw std::invalid_argument("flow/density region smaller than one tile");

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write flow/density file: " + path.string());
  out << "t_center_s,x_center_m,q_veh_per_hr,k_veh_per_km\n";
  char buf[160];
  for (int jt = 0; jt < n_t; ++jt) {
    for (int ix = 0; ix < n_x; ++ix) {
      Region r;
      r.t1_s = region.t1_s + jt * tile.dt_s;
      r.t2_s = r.t1_s + tile.dt_s;
      r.x1_m = region.x1_m + ix * tile.dx_m;
      r.x2_m = r.x1_m + tile.dx_m;
      FlowDensity fd = edie_flow_density(trajectories, r);
      std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g,%.10g", r.t1_s + tile.dt_s / 2,
                    r.x1_m + tile.dx_m / 2, fd.q_veh_per_hr, fd.k_veh_per_km);
      out << buf << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

} // namespace tse
