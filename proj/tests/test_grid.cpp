#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tse/grid.hpp"

using namespace tse;

namespace {

SpaceTimeGrid standard_grid() {
  SpaceTimeGrid g;
  g.dx_m = 10.0;
  g.dt_s = 1.0;
  g.nx = 80;
  g.nt = 60;
  return g;
}

Trajectory constant_speed_vehicle(const std::string& id, double t0, double x0, double v_kmph,
                                  double duration_s, double step_s) {
  Trajectory traj;
  traj.vehicle_id = id;
  double v_mps = v_kmph / 3.6;
  for (int k = 0; t0 + k * step_s <= t0 + duration_s + 1e-9; ++k) {
    double t = t0 + k * step_s;
    traj.samples.push_back({t, x0 + v_mps * (t - t0), v_kmph});
  }
  return traj;
}

std::filesystem::path temp_file(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "tse_test_grid";
  std::filesystem::create_directories(dir);
  return dir / name;
}

} // namespace

TEST_CASE("cell indexing on the standard window") {
  SpaceTimeGrid g = standard_grid();
  CHECK(cell_of(g, 0.0, 0.0) == CellIndex{0, 0});
  CHECK(cell_of(g, 59.999, 799.999) == CellIndex{79, 59});
  CHECK(cell_of(g, 0.5, 15.0) == CellIndex{1, 0});
  CHECK_FALSE(cell_of(g, 60.0, 0.0).has_value());
  CHECK_FALSE(cell_of(g, 0.0, 800.0).has_value());
  CHECK_FALSE(cell_of(g, -0.001, 0.0).has_value());
  CHECK_FALSE(cell_of(g, 0.0, -0.001).has_value());
}

TEST_CASE("cell indexing respects nonzero origins") {
  SpaceTimeGrid g = standard_grid();
  g.x0_m = 500.0;
  g.t0_s = 300.0;
  CHECK(cell_of(g, 300.0, 500.0) == CellIndex{0, 0});
  CHECK(cell_of(g, 305.5, 627.0) == CellIndex{12, 5});
  CHECK_FALSE(cell_of(g, 299.9, 500.0).has_value());
}

TEST_CASE("cell boxes are half-open") {
  SpaceTimeGrid g = standard_grid();
  CHECK(cell_of(g, 1.0, 10.0) == CellIndex{1, 1});
  CHECK(cell_of(g, 1.0 - 1e-9, 10.0 - 1e-9) == CellIndex{0, 0});
}

TEST_CASE("grid validation") {
  SpaceTimeGrid g = standard_grid();
  CHECK_NOTHROW(validate_grid(g));
  g.dx_m = 0.0;
  CHECK_THROWS_AS(validate_grid(g), std::invalid_argument);
  g = standard_grid();
  g.nt = 0;
  CHECK_THROWS_AS(validate_grid(g), std::invalid_argument);
}

TEST_CASE("flow and density of one vehicle crossing a region") {
  // 72 kmph = 20 m/s starting from x = 0 at t = 5, so the vehicle enters
  // x = 100 exactly at t = 10 and leaves x = 300 exactly at t = 20: 200 m
  // of travel and 10 s of presence on an area of 2000 m*s, i.e.
  // q = 0.1 veh/s = 360 veh/hr and k = 0.005 veh/m = 5 veh/km.
  Trajectory veh = constant_speed_vehicle("a", 5.0, 0.0, 72.0, 25.0, 0.5);
  Region region{10.0, 20.0, 100.0, 300.0};
  FlowDensity fd = edie_flow_density(std::vector<Trajectory>{veh}, region);
  CHECK(fd.q_veh_per_hr == doctest::Approx(360.0).epsilon(1e-9));
  CHECK(fd.k_veh_per_km == doctest::Approx(5.0).epsilon(1e-9));
}

TEST_CASE("flow/density is additive over vehicles") {
  Trajectory a = constant_speed_vehicle("a", 0.0, 0.0, 72.0, 30.0, 0.5);
  Trajectory b = constant_speed_vehicle("b", 3.0, 0.0, 54.0, 30.0, 0.5);
  Region region{5.0, 25.0, 50.0, 350.0};
  FlowDensity both = edie_flow_density(std::vector<Trajectory>{a, b}, region);
  FlowDensity fa = edie_flow_density(std::vector<Trajectory>{a}, region);
  FlowDensity fb = edie_flow_density(std::vector<Trajectory>{b}, region);
  CHECK(both.q_veh_per_hr == doctest::Approx(fa.q_veh_per_hr + fb.q_veh_per_hr).epsilon(1e-12));
  CHECK(both.k_veh_per_km == doctest::Approx(fa.k_veh_per_km + fb.k_veh_per_km).epsilon(1e-12));
}

TEST_CASE("flow over density recovers a constant speed") {
  Trajectory veh = constant_speed_vehicle("a", 0.0, 0.0, 85.0, 60.0, 0.2);
  Region region{5.0, 40.0, 100.0, 700.0};
  FlowDensity fd = edie_flow_density(std::vector<Trajectory>{veh}, region);
  CHECK(fd.q_veh_per_hr / fd.k_veh_per_km == doctest::Approx(85.0).epsilon(1e-9));
}

TEST_CASE("stopped vehicles add density but no flow") {
  Trajectory veh;
  veh.vehicle_id = "s";
  for (int k = 0; k <= 20; ++k) veh.samples.push_back({k * 1.0, 150.0, 0.0});
  Region region{0.0, 20.0, 100.0, 200.0};
  FlowDensity fd = edie_flow_density(std::vector<Trajectory>{veh}, region);
  CHECK(fd.q_veh_per_hr == doctest::Approx(0.0));
  // 20 s over 2000 m*s = 0.01 veh/m.
  CHECK(fd.k_veh_per_km == doctest::Approx(10.0).epsilon(1e-9));
}

TEST_CASE("empty-region validation") {
  Region bad{10.0, 10.0, 0.0, 100.0};
  CHECK_THROWS_AS(edie_flow_density({}, bad), std::invalid_argument);
}

TEST_CASE("trajectory CSV round trip") {
  std::vector<Trajectory> trajs;
  trajs.push_back(constant_speed_vehicle("veh-1", 0.0, 0.0, 88.123456, 10.0, 0.2));
  trajs.push_back(constant_speed_vehicle("veh-2", 1.0, 37.5, 61.7, 10.0, 0.2));
  auto path = temp_file("roundtrip.csv");
  write_trajectories_csv(trajs, path);
  auto loaded = read_trajectories_csv(path);
  REQUIRE(loaded.size() == trajs.size());
  for (std::size_t v = 0; v < trajs.size(); ++v) {
    CHECK(loaded[v].vehicle_id == trajs[v].vehicle_id);
    REQUIRE(loaded[v].samples.size() == trajs[v].samples.size());
    for (std::size_t k = 0; k < trajs[v].samples.size(); ++k) {
      CHECK(loaded[v].samples[k].t_s == doctest::Approx(trajs[v].samples[k].t_s).epsilon(1e-6));
      CHECK(loaded[v].samples[k].x_m == doctest::Approx(trajs[v].samples[k].x_m).epsilon(1e-6));
      CHECK(loaded[v].samples[k].v_kmph ==
            doctest::Approx(trajs[v].samples[k].v_kmph).epsilon(1e-6));
    }
  }
}

TEST_CASE("CSV reader keeps vehicles in first-appearance order and allows interleaving") {
  auto path = temp_file("interleaved.csv");
  std::ofstream out(path);
  out << "vehicle_id,t_s,x_m,v_kmph\n"
      << "b,0,10,50\n"
      << "a,0,0,60\n"
      << "b,1,24,50\n"
      << "a,1,17,60\n";
  out.close();
  auto loaded = read_trajectories_csv(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].vehicle_id == "b");
  CHECK(loaded[1].vehicle_id == "a");
  CHECK(loaded[0].samples.size() == 2);
  CHECK(loaded[1].samples.size() == 2);
}

TEST_CASE("CSV reader rejects malformed input with line numbers") {
  auto path = temp_file("bad.csv");

  SUBCASE("bad header") {
    std::ofstream(path) << "vid,t,x,v\n";
    CHECK_THROWS_WITH_AS(read_trajectories_csv(path),
                         doctest::Contains("expected header"), std::runtime_error);
  }
  SUBCASE("bad numeric field") {
    std::ofstream(path) << "vehicle_id,t_s,x_m,v_kmph\na,0,zero,50\n";
    CHECK_THROWS_WITH_AS(read_trajectories_csv(path), doctest::Contains(":2:"),
                         std::runtime_error);
  }
  SUBCASE("missing field") {
    std::ofstream(path) << "vehicle_id,t_s,x_m,v_kmph\na,0,10\n";
    CHECK_THROWS_WITH_AS(read_trajectories_csv(path), doctest::Contains(":2:"),
                         std::runtime_error);
  }
  SUBCASE("negative speed") {
    std::ofstream(path) << "vehicle_id,t_s,x_m,v_kmph\na,0,10,-5\n";
    CHECK_THROWS_WITH_AS(read_trajectories_csv(path), doctest::Contains("negative speed"),
                         std::runtime_error);
  }
  SUBCASE("non-monotonic time names the vehicle") {
    std::ofstream(path) << "vehicle_id,t_s,x_m,v_kmph\na,5,10,50\na,5,11,50\n";
    CHECK_THROWS_WITH_AS(read_trajectories_csv(path), doctest::Contains("vehicle a"),
                         std::runtime_error);
  }
  SUBCASE("decreasing position names the vehicle") {
    std::ofstream(path) << "vehicle_id,t_s,x_m,v_kmph\na,5,10,50\na,6,9,50\n";
    CHECK_THROWS_WITH_AS(read_trajectories_csv(path), doctest::Contains("trajectory a"),
                         std::runtime_error);
  }
}

TEST_CASE("speed field shape and validation") {
  SpeedField f = SpeedField::zeros(standard_grid());
  CHECK(f.values.size() == 80u * 60u);
  f.at(3, 4) = 88.0;
  CHECK(f.values[3 * 60 + 4] == 88.0);
  CHECK_NOTHROW(validate_speed_field(f));
  f.at(0, 0) = -1.0;
  CHECK_THROWS_AS(validate_speed_field(f), std::runtime_error);
  f.at(0, 0) = 1e5;
  CHECK_THROWS_AS(validate_speed_field(f), std::runtime_error);
  f.at(0, 0) = 0.0;
  f.values.pop_back();
  CHECK_THROWS_AS(validate_speed_field(f), std::runtime_error);
}
