#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "tse/eval.hpp"
#include "tse/grid.hpp"
#include "tse/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(const std::string& args) {
  std::string cmd = std::string(TSE_CLI_PATH) + " " + args;
  int rc = std::system(cmd.c_str());
  if (rc == -1) return -1;
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

fs::path work_dir() {
  auto dir = fs::temp_directory_path() / "tse_test_cli";
  return dir;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(1) << '\n';
}

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json sim_config(std::uint64_t seed) {
  return json{{"section_length_m", 800.0},
              {"duration_s", 150.0},
              {"seed", seed},
              {"demand", json::array({json{{"t_start_s", 0.0}, {"inflow_veh_hr", 1500.0}}})},
              {"record", json{{"x_start_m", 0.0}, {"x_end_m", 300.0}}}};
}

} // namespace

TEST_CASE("full pipeline: simulate, dataset, train, reconstruct, evaluate") {
  fs::remove_all(work_dir());
  fs::path dir = work_dir() / "pipeline";
  fs::create_directories(dir);

  // simulate
  write_json(dir / "sim.json", sim_config(11));
  REQUIRE(run_cli("simulate --config " + (dir / "sim.json").string() + " --out-dir " +
                  dir.string() + " --out trajectories.csv --stats stats.json") == 0);
  REQUIRE(fs::exists(dir / "trajectories.csv"));
  REQUIRE(fs::exists(dir / "stats.json"));
  REQUIRE(fs::exists(dir / "manifest-simulate.json"));
  auto trajectories = tse::read_trajectories_csv(dir / "trajectories.csv");
  CHECK(trajectories.size() > 5);
  json stats = json::parse(read_all(dir / "stats.json"));
  CHECK(stats.at("vehicles").get<int>() == static_cast<int>(trajectories.size()));
  json sim_manifest = json::parse(read_all(dir / "manifest-simulate.json"));
  CHECK(sim_manifest.at("tool") == "tse");
  CHECK(sim_manifest.at("command") == "simulate");
  CHECK(!sim_manifest.contains("timestamp"));

  // build-dataset
  json ds_cfg{{"frames", json::array({json{{"trajectories_csv", (dir / "trajectories.csv").string()},
                                           {"regime", "free_flow"},
                                           {"grid", json{{"x0_m", 0.0},
                                                         {"t0_s", 20.0},
                                                         {"nx", 30},
                                                         {"nt", 120}}}}})},
              {"penetration_rates", json::array({0.5})},
              {"probe_seeds", json::array({1})},
              {"window_nt", 24},
              {"stride_t_s", 12.0}};
  write_json(dir / "dataset.json", ds_cfg);
  REQUIRE(run_cli("build-dataset --config " + (dir / "dataset.json").string() + " --out-dir " +
                  dir.string() + " --out dataset.tseds") == 0);
  REQUIRE(fs::exists(dir / "dataset.tseds"));
  auto samples = tse::load_dataset(dir / "dataset.tseds");
  CHECK(samples.size() == 9); // (120 - 24) / 12 + 1 windows
  for (const auto& s : samples) {
    CHECK(s.input.grid.nx == 30);
    CHECK(s.input.grid.nt == 24);
    CHECK(s.penetration == 0.5);
  }

  // train
  json tr_cfg{{"kernel", "anisotropic"}, {"epochs", 2},          {"batch_size", 4},
              {"learning_rate", 1e-3},   {"val_fraction", 0.2},  {"init_seed", 7},
              {"seed", 7}};
  write_json(dir / "train.json", tr_cfg);
  REQUIRE(run_cli("train --config " + (dir / "train.json").string() + " --data " +
                  (dir / "dataset.tseds").string() + " --out-dir " + dir.string() +
                  " --out model.json --history history.csv > " + (dir / "train.out").string()) ==
          0);
  REQUIRE(fs::exists(dir / "model.json"));
  REQUIRE(fs::exists(dir / "history.csv"));
  CHECK(read_all(dir / "train.out").find("185465 parameters") != std::string::npos);
  {
    std::ifstream hist(dir / "history.csv");
    std::string line;
    REQUIRE(std::getline(hist, line));
    CHECK(line == "epoch,train_loss,val_loss,val_rmse_kmph");
    int rows = 0;
    while (std::getline(hist, line)) ++rows;
    CHECK(rows == 2);
  }

  // reconstruct
  REQUIRE(run_cli("reconstruct --model " + (dir / "model.json").string() + " --probes " +
                  (dir / "trajectories.csv").string() +
                  " --nx 30 --nt 60 --out-dir " + dir.string() +
                  " --out field.csv --image field.ppm") == 0);
  REQUIRE(fs::exists(dir / "field.csv"));
  REQUIRE(fs::exists(dir / "field.ppm"));
  tse::SpeedField field = tse::import_field_csv(dir / "field.csv");
  CHECK(field.grid.nx == 30);
  CHECK(field.grid.nt == 60);
  for (double v : field.values) {
    CHECK(v >= 0.0);
    CHECK(v <= 130.0);
  }
  CHECK(read_all(dir / "field.ppm").substr(0, 3) == "P6\n");

  // evaluate
  REQUIRE(run_cli("evaluate --model " + (dir / "model.json").string() + " --data " +
                  (dir / "dataset.tseds").string() + " --out-dir " + dir.string() +
                  " --out evaluation.csv") == 0);
  {
    std::ifstream ev(dir / "evaluation.csv");
    std::string line;
    REQUIRE(std::getline(ev, line));
    CHECK(line == "model,regime,n_samples,mean_rmse_kmph,std_rmse_kmph");
    REQUIRE(std::getline(ev, line));
    CHECK(line.find("model,free_flow,9,") == 0);
    REQUIRE(std::getline(ev, line));
    CHECK(line.find("model,all,9,") == 0);
  }

  // compare (second model file is a copy, so only the label differs)
  fs::copy_file(dir / "model.json", dir / "model_b.json");
  REQUIRE(run_cli("compare --model " + (dir / "model.json").string() + " --model " +
                  (dir / "model_b.json").string() + " --data " +
                  (dir / "dataset.tseds").string() + " --out-dir " + dir.string() +
                  " --out comparison.csv") == 0);
  {
    std::ifstream cm(dir / "comparison.csv");
    std::string text((std::istreambuf_iterator<char>(cm)), std::istreambuf_iterator<char>());
    CHECK(text.find("\nmodel,") != std::string::npos);
    CHECK(text.find("\nmodel_b,") != std::string::npos);
  }
}

TEST_CASE("mask-info reports cardinality and picture") {
  fs::path dir = work_dir() / "maskinfo";
  fs::create_directories(dir);
  REQUIRE(run_cli("mask-info --kernel 7 > " + (dir / "aniso.txt").string()) == 0);
  std::string aniso = read_all(dir / "aniso.txt");
  CHECK(aniso.find("active cells: 21 of 49") != std::string::npos);
  CHECK(aniso.find('#') != std::string::npos);

  REQUIRE(run_cli("mask-info --kernel 5 --isotropic > " + (dir / "iso.txt").string()) == 0);
  CHECK(read_all(dir / "iso.txt").find("active cells: 25 of 25") != std::string::npos);

  REQUIRE(run_cli("mask-info --kernel 5 --kernel-t 9 --c-w 12 > " +
                  (dir / "wide.txt").string()) == 0);
  CHECK(read_all(dir / "wide.txt").find("kernel: 5x9") != std::string::npos);
}

TEST_CASE("deterministic reruns produce byte-identical artifacts") {
  fs::path base = work_dir() / "determinism";
  fs::path dir_a = base / "a";
  fs::path dir_b = base / "b";
  fs::create_directories(dir_a);
  fs::create_directories(dir_b);

  write_json(base / "sim.json", sim_config(29));
  for (const auto& dir : {dir_a, dir_b})
    REQUIRE(run_cli("simulate --config " + (base / "sim.json").string() + " --deterministic" +
                    " --out-dir " + dir.string()) == 0);
  std::string csv_a = read_all(dir_a / "trajectories.csv");
  REQUIRE(!csv_a.empty());
  CHECK(csv_a == read_all(dir_b / "trajectories.csv"));

  json ds_cfg{{"frames", json::array({json{{"trajectories_csv", (dir_a / "trajectories.csv").string()},
                                           {"regime", "congested"},
                                           {"grid", json{{"t0_s", 20.0}, {"nx", 30}, {"nt", 100}}}}})},
              {"penetration_rates", json::array({0.3})},
              {"probe_seeds", json::array({2})},
              {"window_nt", 20},
              {"stride_t_s", 20.0}};
  write_json(base / "dataset.json", ds_cfg);
  for (const auto& dir : {dir_a, dir_b})
    REQUIRE(run_cli("build-dataset --config " + (base / "dataset.json").string() +
                    " --deterministic --out-dir " + dir.string()) == 0);
  std::string data_a = read_all(dir_a / "dataset.tseds");
  REQUIRE(!data_a.empty());
  CHECK(data_a == read_all(dir_b / "dataset.tseds"));

  json tr_cfg{{"kernel", "isotropic"}, {"epochs", 2}, {"batch_size", 3},
              {"val_fraction", 0.2}};
  write_json(base / "train.json", tr_cfg);
  for (const auto& dir : {dir_a, dir_b})
    REQUIRE(run_cli("train --config " + (base / "train.json").string() + " --data " +
                    (dir / "dataset.tseds").string() + " --deterministic --seed 5" +
                    " --out-dir " + dir.string() + " --history history.csv") == 0);
  std::string model_a = read_all(dir_a / "model.json");
  REQUIRE(!model_a.empty());
  CHECK(model_a == read_all(dir_b / "model.json"));
  CHECK(read_all(dir_a / "history.csv") == read_all(dir_b / "history.csv"));

  // The seed override is recorded in the manifest.
  json manifest = json::parse(read_all(dir_a / "manifest-train.json"));
  CHECK(manifest.at("seed_override").get<int>() == 5);
  CHECK(manifest.at("deterministic").get<bool>() == true);
}

TEST_CASE("failures exit nonzero") {
  fs::path dir = work_dir() / "failures";
  fs::create_directories(dir);
  std::string null_sink = " > /dev/null 2>&1";

  CHECK(run_cli("no-such-command" + null_sink) != 0);
  CHECK(run_cli("simulate" + null_sink) != 0); // missing --config
  CHECK(run_cli("simulate --config /nonexistent.json --out-dir " + dir.string() + null_sink) !=
        0);

  write_json(dir / "incomplete.json", json{{"duration_s", 50.0}});
  CHECK(run_cli("simulate --config " + (dir / "incomplete.json").string() + " --out-dir " +
                dir.string() + null_sink) != 0);

  // reconstruct demands exactly one source
  CHECK(run_cli("reconstruct --probes x.csv --nx 20 --nt 20" + null_sink) != 0);
  CHECK(run_cli("reconstruct --model a --ensemble b --probes x.csv --nx 20 --nt 20" +
                null_sink) != 0);

  CHECK(run_cli("train --config /nonexistent.json --data /nonexistent.tseds --out-dir " +
                dir.string() + null_sink) != 0);
}
