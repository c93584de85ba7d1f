#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tse/ensemble.hpp"
#include "tse/eval.hpp"
#include "tse/grid.hpp"
#include "tse/microsim.hpp"
#include "tse/nn/model.hpp"
#include "tse/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "1.0.0";

struct CommonOpts {
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out_dir = ".";
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--seed", opts.seed, "Override every seed in the config");
  cmd->add_flag("--deterministic", opts.deterministic,
                "Force single-threaded execution for bit-identical reruns");
  cmd->add_option("--out-dir", opts.out_dir, "Directory for outputs and the run manifest");
}

/// Relative output paths land in the run's out-dir; absolute paths win.
fs::path resolve_out(const CommonOpts& opts, const std::string& path) {
  fs::path p(path);
  return p.is_absolute() ? p : fs::path(opts.out_dir) / p;
}

void prepare_out_dir(const CommonOpts& opts) {
  fs::create_directories(opts.out_dir);
#ifdef _OPENMP
  if (opts.deterministic) omp_set_num_threads(1);
#endif
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw std::runtime_error("config " + path + ": " + e.what());
  }
}

void write_manifest(const CommonOpts& opts, const std::string& command, const json& config,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  json m;
  m["tool"] = "tse";
  m["version"] = kToolVersion;
  m["command"] = command;
  m["seed_override"] = opts.seed ? json(*opts.seed) : json(nullptr);
  m["deterministic"] = opts.deterministic;
  m["config"] = config;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  fs::path path = fs::path(opts.out_dir) / ("manifest-" + command + ".json");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
  out << m.dump(1) << '\n';
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  return it == j.end() ? fallback : it->get<T>();
}

tse::SpaceTimeGrid parse_grid(const json& j) {
  tse::SpaceTimeGrid grid;
  grid.x0_m = get_or(j, "x0_m", 0.0);
  grid.t0_s = get_or(j, "t0_s", 0.0);
  grid.dx_m = get_or(j, "dx_m", 10.0);
  grid.dt_s = get_or(j, "dt_s", 1.0);
  grid.nx = j.at("nx").get<int>();
  grid.nt = j.at("nt").get<int>();
  tse::validate_grid(grid);
  return grid;
}

tse::WaveParams parse_waves(const json& j) {
  tse::WaveParams waves;
  waves.c_v_max_kmph = get_or(j, "c_v_max_kmph", waves.c_v_max_kmph);
  waves.c_v_min_kmph = get_or(j, "c_v_min_kmph", waves.c_v_min_kmph);
  waves.c_w_kmph = get_or(j, "c_w_kmph", waves.c_w_kmph);
  return waves;
}

tse::InterpolationParams parse_interp(const json& j) {
  tse::InterpolationParams p;
  p.v_max_kmph = get_or(j, "v_max_kmph", p.v_max_kmph);
  p.l_up_m = get_or(j, "l_up_m", p.l_up_m);
  p.l_dn_m = get_or(j, "l_dn_m", p.l_dn_m);
  return p;
}

// --- simulate -------------------------------------------------------------

int run_simulate(const CommonOpts& opts, const std::string& config_path,
                 const std::string& out_csv, const std::string& stats_path) {
  prepare_out_dir(opts);
  json cfg = load_json(config_path);

  tse::DemandScenario scenario;
  scenario.duration_s = cfg.at("duration_s").get<double>();
  scenario.seed = opts.seed ? *opts.seed : get_or<std::uint64_t>(cfg, "seed", 1);
  scenario.ramp_inflow_fraction = get_or(cfg, "ramp_inflow_fraction", 0.0);
  scenario.ramp_position_m = get_or(cfg, "ramp_position_m", 0.0);
  for (const auto& step : cfg.at("demand"))
    scenario.demand.push_back(
        {step.at("t_start_s").get<double>(), step.at("inflow_veh_hr").get<double>()});

  tse::DriverParams drivers;
  if (cfg.contains("drivers")) {
    const json& d = cfg["drivers"];
    drivers.v_desired_lo_kmph = get_or(d, "v_desired_lo_kmph", drivers.v_desired_lo_kmph);
    drivers.v_desired_hi_kmph = get_or(d, "v_desired_hi_kmph", drivers.v_desired_hi_kmph);
    drivers.a_max_mps2 = get_or(d, "a_max_mps2", drivers.a_max_mps2);
    drivers.b_comf_mps2 = get_or(d, "b_comf_mps2", drivers.b_comf_mps2);
    drivers.t_headway_s = get_or(d, "t_headway_s", drivers.t_headway_s);
    drivers.s0_m = get_or(d, "s0_m", drivers.s0_m);
    drivers.vehicle_length_m = get_or(d, "vehicle_length_m", drivers.vehicle_length_m);
    drivers.reaction_delay_s = get_or(d, "reaction_delay_s", drivers.reaction_delay_s);
  }

  double section_length = cfg.at("section_length_m").get<double>();
  double step_s = get_or(cfg, "step_s", 0.2);

  tse::SimStats stats;
  std::vector<tse::Trajectory> trajectories =
      tse::simulate(scenario, section_length, drivers, step_s, &stats);
  if (cfg.contains("record")) {
    trajectories = tse::record_section(trajectories, cfg["record"].at("x_start_m").get<double>(),
                                       cfg["record"].at("x_end_m").get<double>());
  }

  fs::path out_path = resolve_out(opts, out_csv);
  tse::write_trajectories_csv(trajectories, out_path);

  json stats_json = {{"vehicles", trajectories.size()},
                     {"spawned_mainline", stats.spawned_mainline},
                     {"spawned_ramp", stats.spawned_ramp},
                     {"dropped_mainline", stats.dropped_mainline},
                     {"dropped_ramp", stats.dropped_ramp},
                     {"safety_clamps", stats.safety_clamps}};
  std::vector<std::string> outputs{out_path.string()};
  if (!stats_path.empty()) {
    fs::path sp = resolve_out(opts, stats_path);
    std::ofstream sout(sp);
    if (!sout) throw std::runtime_error("cannot write stats file: " + sp.string());
    sout << stats_json.dump(1) << '\n';
    outputs.push_back(sp.string());
  }
  cfg["seed"] = scenario.seed;
  write_manifest(opts, "simulate", cfg, {config_path}, outputs);
  std::printf("simulated %zu vehicles (%d mainline, %d ramp)\n", trajectories.size(),
              stats.spawned_mainline, stats.spawned_ramp);
  return 0;
}

// --- build-dataset --------------------------------------------------------

int run_build_dataset(const CommonOpts& opts, const std::string& config_path,
                      const std::string& out_file) {
  prepare_out_dir(opts);
  json cfg = load_json(config_path);

  std::vector<tse::Frame> frames;
  for (const auto& f : cfg.at("frames")) {
    tse::Frame frame;
    frame.trajectories = tse::read_trajectories_csv(f.at("trajectories_csv").get<std::string>());
    frame.grid = parse_grid(f.at("grid"));
    frame.regime = tse::regime_from_name(f.at("regime").get<std::string>());
    frames.push_back(std::move(frame));
  }

  tse::DatasetConfig dcfg;
  dcfg.penetration_rates = cfg.at("penetration_rates").get<std::vector<double>>();
  dcfg.probe_seeds = cfg.at("probe_seeds").get<std::vector<std::uint64_t>>();
  dcfg.window_nt = get_or(cfg, "window_nt", dcfg.window_nt);
  dcfg.stride_t_s = get_or(cfg, "stride_t_s", dcfg.stride_t_s);
  if (cfg.contains("interp")) dcfg.interp = parse_interp(cfg["interp"]);
  dcfg.v_scale_kmph = get_or(cfg, "v_scale_kmph", dcfg.v_scale_kmph);
  dcfg.shuffle_seed = opts.seed ? *opts.seed : get_or<std::uint64_t>(cfg, "shuffle_seed", 0);

  std::vector<std::string> warnings;
  std::vector<tse::Sample> samples = tse::build_dataset(frames, dcfg, &warnings);
  for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

  fs::path out_path = resolve_out(opts, out_file);
  tse::save_dataset(samples, out_path);
  cfg["shuffle_seed"] = dcfg.shuffle_seed;
  write_manifest(opts, "build-dataset", cfg, {config_path}, {out_path.string()});
  std::printf("wrote %zu samples\n", samples.size());
  return 0;
}

// --- train ----------------------------------------------------------------

int run_train(const CommonOpts& opts, const std::string& config_path, const std::string& data_file,
              const std::string& out_model, const std::string& history_file) {
  prepare_out_dir(opts);
  json cfg = load_json(config_path);

  std::string kernel = get_or<std::string>(cfg, "kernel", "anisotropic");
  tse::nn::KernelKind kind;
  if (kernel == "anisotropic")
    kind = tse::nn::KernelKind::anisotropic;
  else if (kernel == "isotropic")
    kind = tse::nn::KernelKind::isotropic;
  else
    throw std::runtime_error("config: kernel must be 'anisotropic' or 'isotropic'");

  tse::WaveParams waves = cfg.contains("waves") ? parse_waves(cfg["waves"]) : tse::WaveParams{};
  double dx = get_or(cfg, "grid_dx_m", 10.0);
  double dt = get_or(cfg, "grid_dt_s", 1.0);
  double v_scale = get_or(cfg, "v_scale_kmph", 128.0);
  auto init_seed = opts.seed ? *opts.seed : get_or<std::uint64_t>(cfg, "init_seed", 1);

  tse::TrainConfig tcfg;
  tcfg.batch_size = get_or(cfg, "batch_size", tcfg.batch_size);
  tcfg.epochs = get_or(cfg, "epochs", tcfg.epochs);
  tcfg.learning_rate = get_or(cfg, "learning_rate", tcfg.learning_rate);
  tcfg.val_fraction = get_or(cfg, "val_fraction", tcfg.val_fraction);
  tcfg.seed = opts.seed ? *opts.seed : get_or<std::uint64_t>(cfg, "seed", 0);
  tcfg.v_scale_kmph = v_scale;
  tcfg.shuffle = get_or(cfg, "shuffle", true);

  std::vector<tse::Sample> samples = tse::load_dataset(data_file);
  auto model = tse::nn::make_model<float>(tse::nn::ModelArch{}, kind, waves, dx, dt, v_scale,
                                          init_seed);
  std::printf("training %s model, %lld parameters, %zu samples\n", kernel.c_str(),
              static_cast<long long>(model.param_count()), samples.size());

  tse::TrainResult<float> result = tse::train(std::move(model), samples, tcfg);

  fs::path model_path = resolve_out(opts, out_model);
  tse::nn::save_model(result.model, model_path);
  std::vector<std::string> outputs{model_path.string()};
  if (!history_file.empty()) {
    fs::path hp = resolve_out(opts, history_file);
    tse::write_history_csv(result.history, hp);
    outputs.push_back(hp.string());
  }
  cfg["seed"] = tcfg.seed;
  cfg["init_seed"] = init_seed;
  write_manifest(opts, "train", cfg, {config_path, data_file}, outputs);
  const tse::EpochStats& best = result.history[result.best_epoch - 1];
  std::printf("best epoch %d: val_rmse %.2f kmph\n", result.best_epoch, best.val_rmse_kmph);
  return 0;
}

// --- reconstruct ----------------------------------------------------------

int run_reconstruct(const CommonOpts& opts, const std::string& model_file,
                    const std::string& ensemble_file, const std::string& probes_csv,
                    const tse::SpaceTimeGrid& grid, const std::string& out_field,
                    const std::string& out_image) {
  prepare_out_dir(opts);
  tse::validate_grid(grid);
  std::vector<tse::Trajectory> probes = tse::read_trajectories_csv(probes_csv);

  tse::SpeedField field;
  double v_scale;
  if (!model_file.empty()) {
    auto model = tse::nn::load_model<float>(model_file);
    v_scale = model.v_scale_kmph;
    field = tse::nn::infer(model, tse::encode_input(probes, grid, v_scale));
  } else {
    auto ensemble = tse::load_ensemble<float>(ensemble_file);
    v_scale = ensemble.members.front().model.v_scale_kmph;
    field = tse::ensemble_predict(ensemble, tse::encode_input(probes, grid, v_scale));
  }

  fs::path field_path = resolve_out(opts, out_field);
  tse::export_field_csv(field, field_path);
  std::vector<std::string> outputs{field_path.string()};
  if (!out_image.empty()) {
    fs::path img_path = resolve_out(opts, out_image);
    tse::export_field_ppm(field, img_path);
    outputs.push_back(img_path.string());
  }

  json cfg = {{"model", model_file},       {"ensemble", ensemble_file},
              {"probes", probes_csv},      {"v_scale_kmph", v_scale},
              {"grid",
               {{"x0_m", grid.x0_m},
                {"t0_s", grid.t0_s},
                {"dx_m", grid.dx_m},
                {"dt_s", grid.dt_s},
                {"nx", grid.nx},
                {"nt", grid.nt}}}};
  write_manifest(opts, "reconstruct", cfg,
                 {model_file.empty() ? ensemble_file : model_file, probes_csv}, outputs);

  auto wave = tse::wave_speed_estimate_kmph(field);
  if (wave)
    std::printf("reconstructed %dx%d field, dominant wave speed %.1f kmph\n", grid.nx, grid.nt,
                *wave);
  else
    std::printf("reconstructed %dx%d field\n", grid.nx, grid.nt);
  return 0;
}

// --- evaluate / compare ---------------------------------------------------

void write_rmse_rows(std::ofstream& out, const std::string& model_label,
                     const std::vector<tse::RegimeRmse>& rows) {
  char buf[200];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%d,%.10g,%.10g", model_label.c_str(), r.label.c_str(),
                  r.n_samples, r.mean_rmse_kmph, r.std_rmse_kmph);
    out << buf << '\n';
  }
}

int run_evaluate(const CommonOpts& opts, const std::vector<std::string>& model_files,
                 const std::string& data_file, const std::string& out_csv,
                 const std::string& command) {
  prepare_out_dir(opts);
  std::vector<tse::Sample> samples = tse::load_dataset(data_file);

  fs::path out_path = resolve_out(opts, out_csv);
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write evaluation file: " + out_path.string());
  out << "model,regime,n_samples,mean_rmse_kmph,std_rmse_kmph\n";
  for (const auto& mf : model_files) {
    auto model = tse::nn::load_model<float>(mf);
    auto rows = tse::evaluate_by_regime(model, samples);
    write_rmse_rows(out, fs::path(mf).stem().string(), rows);
    for (const auto& r : rows)
      if (r.label == "all")
        std::printf("%s: rmse %.2f +/- %.2f kmph over %d samples\n",
                    fs::path(mf).stem().string().c_str(), r.mean_rmse_kmph, r.std_rmse_kmph,
                    r.n_samples);
  }
  if (!out) throw std::runtime_error("write failed: " + out_path.string());

  json cfg = {{"models", model_files}, {"data", data_file}};
  std::vector<std::string> inputs = model_files;
  inputs.push_back(data_file);
  write_manifest(opts, command, cfg, inputs, {out_path.string()});
  return 0;
}

// --- mask-info ------------------------------------------------------------

int run_mask_info(int kh, int kw, bool isotropic, const tse::WaveParams& waves, double dx,
                  double dt) {
  if (kw == 0) kw = kh;
  tse::KernelMask mask = isotropic ? tse::build_isotropic_mask(kh, kw)
                                   : tse::build_anisotropic_mask(kh, kw, waves, dx, dt);
  std::printf("kernel: %dx%d (space x time)\n", kh, kw);
  std::printf("kind: %s\n", isotropic ? "isotropic" : "anisotropic");
  if (!isotropic)
    std::printf("waves: c_v_max=%g c_v_min=%g c_w=%g kmph on dx=%g m, dt=%g s\n",
                waves.c_v_max_kmph, waves.c_v_min_kmph, waves.c_w_kmph, dx, dt);
  std::printf("active cells: %d of %d (ratio %.3f)\n", mask.cardinality(), kh * kw,
              static_cast<double>(mask.cardinality()) / (kh * kw));
  std::printf("%s", mask.render().c_str());
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Freeway traffic speed field reconstruction toolkit"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  CommonOpts opts;

  auto* sim = app.add_subcommand("simulate", "Run the car-following simulator");
  std::string sim_config, sim_out = "trajectories.csv", sim_stats;
  sim->add_option("--config", sim_config, "Scenario config (JSON)")->required();
  sim->add_option("--out", sim_out, "Output trajectory CSV");
  sim->add_option("--stats", sim_stats, "Optional spawn/clamp statistics (JSON)");
  add_common(sim, opts);

  auto* ds = app.add_subcommand("build-dataset", "Slice trajectories into training samples");
  std::string ds_config, ds_out = "dataset.tseds";
  ds->add_option("--config", ds_config, "Dataset config (JSON)")->required();
  ds->add_option("--out", ds_out, "Output dataset cache");
  add_common(ds, opts);

  auto* tr = app.add_subcommand("train", "Train a reconstruction model");
  std::string tr_config, tr_data, tr_out = "model.json", tr_history;
  tr->add_option("--config", tr_config, "Training config (JSON)")->required();
  tr->add_option("--data", tr_data, "Dataset cache from build-dataset")->required();
  tr->add_option("--out", tr_out, "Output model file");
  tr->add_option("--history", tr_history, "Optional per-epoch history CSV");
  add_common(tr, opts);

  auto* rec = app.add_subcommand("reconstruct", "Reconstruct a speed field from probe data");
  std::string rec_model, rec_ensemble, rec_probes, rec_out = "field.csv", rec_image;
  tse::SpaceTimeGrid rec_grid;
  rec->add_option("--model", rec_model, "Model file");
  rec->add_option("--ensemble", rec_ensemble, "Ensemble manifest");
  rec->add_option("--probes", rec_probes, "Probe trajectory CSV")->required();
  rec->add_option("--x0", rec_grid.x0_m, "Grid origin in space (m)");
  rec->add_option("--t0", rec_grid.t0_s, "Grid origin in time (s)");
  rec->add_option("--dx", rec_grid.dx_m, "Cell size in space (m)");
  rec->add_option("--dt", rec_grid.dt_s, "Cell size in time (s)");
  rec->add_option("--nx", rec_grid.nx, "Space cells")->required();
  rec->add_option("--nt", rec_grid.nt, "Time cells")->required();
  rec->add_option("--out", rec_out, "Output field CSV");
  rec->add_option("--image", rec_image, "Optional heatmap PPM");
  add_common(rec, opts);

  auto* ev = app.add_subcommand("evaluate", "Per-regime RMSE of a model on a dataset");
  std::vector<std::string> ev_models;
  std::string ev_data, ev_out = "evaluation.csv";
  ev->add_option("--model", ev_models, "Model file")->required()->expected(1);
  ev->add_option("--data", ev_data, "Dataset cache")->required();
  ev->add_option("--out", ev_out, "Output CSV");
  add_common(ev, opts);

  auto* cmp = app.add_subcommand("compare", "Per-regime RMSE of several models side by side");
  std::vector<std::string> cmp_models;
  std::string cmp_data, cmp_out = "comparison.csv";
  cmp->add_option("--model", cmp_models, "Model file (repeatable)")
      ->required()
      ->expected(1, -1);
  cmp->add_option("--data", cmp_data, "Dataset cache")->required();
  cmp->add_option("--out", cmp_out, "Output CSV");
  add_common(cmp, opts);

  auto* mi = app.add_subcommand("mask-info", "Show a kernel mask and its cardinality");
  int mi_kh = 7, mi_kw = 0;
  bool mi_iso = false;
  tse::WaveParams mi_waves;
  double mi_dx = 10.0, mi_dt = 1.0;
  mi->add_option("--kernel", mi_kh, "Kernel extent in space (odd)");
  mi->add_option("--kernel-t", mi_kw, "Kernel extent in time (defaults to --kernel)");
  mi->add_flag("--isotropic", mi_iso, "Show the unconstrained kernel instead");
  mi->add_option("--c-v-max", mi_waves.c_v_max_kmph, "Fastest free-flow wave (kmph)");
  mi->add_option("--c-v-min", mi_waves.c_v_min_kmph, "Slowest free-flow wave (kmph)");
  mi->add_option("--c-w", mi_waves.c_w_kmph, "Congested wave speed (kmph)");
  mi->add_option("--dx", mi_dx, "Cell size in space (m)");
  mi->add_option("--dt", mi_dt, "Cell size in time (s)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return run_simulate(opts, sim_config, sim_out, sim_stats);
    if (ds->parsed()) return run_build_dataset(opts, ds_config, ds_out);
    if (tr->parsed()) return run_train(opts, tr_config, tr_data, tr_out, tr_history);
    if (rec->parsed()) {
      if (rec_model.empty() == rec_ensemble.empty())
        throw std::runtime_error("reconstruct: give exactly one of --model or --ensemble");
      return run_reconstruct(opts, rec_model, rec_ensemble, rec_probes, rec_grid, rec_out,
                             rec_image);
    }
    if (ev->parsed()) return run_evaluate(opts, ev_models, ev_data, ev_out, "evaluate");
    if (cmp->parsed()) return run_evaluate(opts, cmp_models, cmp_data, cmp_out, "compare");
    if (mi->parsed()) return run_mask_info(mi_kh, mi_kw, mi_iso, mi_waves, mi_dx, mi_dt);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
