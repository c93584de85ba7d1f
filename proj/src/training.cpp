#include "tse/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "tse/nn/adam.hpp"
#include "tse/random.hpp"

namespace tse {

const char* regime_name(Regime regime) {
  switch (regime) {
    case Regime::free_flow: return "free_flow";
    case Regime::slow_moving: return "slow_moving";
    case Regime::congested: return "congested";
  }
  throw std::invalid_argument("unknown regime");
}

Regime regime_from_name(const std::string& name) {
  if (name == "free_flow") return Regime::free_flow;
  if (name == "slow_moving") return Regime::slow_moving;
  if (name == "congested") return Regime::congested;
  throw std::invalid_argument("unknown regime name '" + name + "'");
}

std::vector<Sample> build_dataset(std::span<const Frame> frames, const DatasetConfig& config,
                                  std::vector<std::string>* warnings) {
  if (config.window_nt < 1) throw std::invalid_argument("dataset: window_nt must be positive");
  if (!(config.stride_t_s > 0.0)) throw std::invalid_argument("dataset: stride must be positive");
  if (config.penetration_rates.empty() || config.probe_seeds.empty())
    throw std::invalid_argument("dataset: need at least one rate and one probe seed");
  for (double rate : config.penetration_rates)
    if (!(rate >= 0.0 && rate <= 1.0))
      throw std::invalid_argument("dataset: penetration rates must be in [0, 1]");
  validate_interpolation_params(config.interp);

  std::vector<Sample> samples;
  for (std::size_t fi = 0; fi < frames.size(); ++fi) {
    const Frame& frame = frames[fi];
    validate_grid(frame.grid);
    if (frame.grid.nt < config.window_nt) {
      if (warnings)
        warnings->push_back("frame " + std::to_string(fi) +
                            " shorter than one window, skipped");
      continue;
    }
    int stride_cols = std::max(1, static_cast<int>(std::lround(config.stride_t_s / frame.grid.dt_s)));
    SpeedField target_frame = interpolate_speed_field(frame.trajectories, frame.grid, config.interp);

    for (double rate : config.penetration_rates) {
      for (std::uint64_t seed : config.probe_seeds) {
        std::vector<Trajectory> probes = sample_probes(frame.trajectories, rate, seed);
        ProbeInputTensor input_frame = encode_input(probes, frame.grid, config.v_scale_kmph);

        for (int j0 = 0; j0 + config.window_nt <= frame.grid.nt; j0 += stride_cols) {
          SpaceTimeGrid wgrid = frame.grid;
          wgrid.t0_s = frame.grid.t0_s + j0 * frame.grid.dt_s;
          wgrid.nt = config.window_nt;

          Sample sample;
          sample.regime = frame.regime;
          sample.penetration = rate;
          sample.input.grid = wgrid;
          sample.input.v_scale_kmph = config.v_scale_kmph;
          sample.input.channels.resize(3 * static_cast<std::size_t>(wgrid.cell_count()));
          sample.target = SpeedField::zeros(wgrid);
          for (int c = 0; c < 3; ++c)
            for (int i = 0; i < wgrid.nx; ++i)
              for (int j = 0; j < wgrid.nt; ++j)
                sample.input.channels[(static_cast<std::size_t>(c) * wgrid.nx + i) * wgrid.nt + j] =
                    input_frame.at(c, i, j0 + j);
          for (int i = 0; i < wgrid.nx; ++i)
            for (int j = 0; j < wgrid.nt; ++j)
              sample.target.at(i, j) = target_frame.at(i, j0 + j);
          samples.push_back(std::move(sample));
        }
      }
    }
  }

  RngEngine rng(config.shuffle_seed);
  shuffle(samples, rng);
  return samples;
}

std::vector<Sample> mix_datasets(const std::vector<std::vector<Sample>>& datasets,
                                 std::span<const double> weights, std::uint64_t seed) {
  if (datasets.empty() || datasets.size() != weights.size())
    throw std::invalid_argument("mix: need one positive weight per dataset");
  double wsum = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw std::invalid_argument("mix: weights must be positive");
    wsum += w;
  }

  // Largest total honoring the proportions without replacement.
  std::size_t total = std::numeric_limits<std::size_t>::max();
  for (std::size_t r = 0; r < datasets.size(); ++r) {
    double cap = static_cast<double>(datasets[r].size()) * wsum / weights[r];
    total = std::min(total, static_cast<std::size_t>(std::floor(cap + 1e-9)));
  }

  // Apportion by largest remainder so counts sum exactly to `total`.
  std::vector<std::size_t> counts(datasets.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t r = 0; r < datasets.size(); ++r) {
    double exact = static_cast<double>(total) * weights[r] / wsum;
    counts[r] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    assigned += counts[r];
    remainders.emplace_back(exact - static_cast<double>(counts[r]), r);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) counts[remainders[k].second] += 1;

  RngEngine rng(seed);
  std::vector<Sample> mixed;
  mixed.reserve(total);
  for (std::size_t r = 0; r < datasets.size(); ++r) {
    std::vector<std::size_t> order(datasets[r].size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);
    order.resize(counts[r]);
    std::sort(order.begin(), order.end());
    for (std::size_t idx : order) mixed.push_back(datasets[r][idx]);
  }
  return mixed;
}

// --- dataset cache --------------------------------------------------------

namespace {

constexpr char kDatasetMagic[8] = {'T', 'S', 'E', 'D', 'S', '0', '0', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::filesystem::path& path) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("dataset file truncated: " + path.string());
  return value;
}

} // namespace

void save_dataset(std::span<const Sample> samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path.string());
  out.write(kDatasetMagic, sizeof(kDatasetMagic));
  write_pod(out, static_cast<std::uint64_t>(samples.size()));
  for (const auto& s : samples) {
    write_pod(out, s.input.grid.x0_m);
    write_pod(out, s.input.grid.t0_s);
    write_pod(out, s.input.grid.dx_m);
    write_pod(out, s.input.grid.dt_s);
    write_pod(out, static_cast<std::int32_t>(s.input.grid.nx));
    write_pod(out, static_cast<std::int32_t>(s.input.grid.nt));
    write_pod(out, s.input.v_scale_kmph);
    write_pod(out, static_cast<std::uint8_t>(s.regime));
    write_pod(out, s.penetration);
    out.write(reinterpret_cast<const char*>(s.input.channels.data()),
              static_cast<std::streamsize>(s.input.channels.size()));
    out.write(reinterpret_cast<const char*>(s.target.values.data()),
              static_cast<std::streamsize>(s.target.values.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<Sample> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a dataset file: " + path.string());
  auto count = read_pod<std::uint64_t>(in, path);

  std::vector<Sample> samples;
  samples.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    Sample s;
    s.input.grid.x0_m = read_pod<double>(in, path);
    s.input.grid.t0_s = read_pod<double>(in, path);
    s.input.grid.dx_m = read_pod<double>(in, path);
    s.input.grid.dt_s = read_pod<double>(in, path);
    s.input.grid.nx = read_pod<std::int32_t>(in, path);
    s.input.grid.nt = read_pod<std::int32_t>(in, path);
    s.input.v_scale_kmph = read_pod<double>(in, path);
    auto regime = read_pod<std::uint8_t>(in, path);
    if (regime > 2) throw std::runtime_error("dataset file: bad regime tag");
    s.regime = static_cast<Regime>(regime);
    s.penetration = read_pod<double>(in, path);
    validate_grid(s.input.grid);

    std::size_t n = static_cast<std::size_t>(s.input.grid.cell_count());
    s.input.channels.resize(3 * n);
    in.read(reinterpret_cast<char*>(s.input.channels.data()),
            static_cast<std::streamsize>(3 * n));
    s.target.grid = s.input.grid;
    s.target.values.resize(n);
    in.read(reinterpret_cast<char*>(s.target.values.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw std::runtime_error("dataset file truncated: " + path.string());
    samples.push_back(std::move(s));
  }
  return samples;
}

// --- optimization ---------------------------------------------------------

template <typename T>
TrainResult<T> train(nn::ConvModel<T> model, std::span<const Sample> samples,
                     const TrainConfig& config) {
  if (samples.empty()) throw std::invalid_argument("train: no samples");
  if (config.batch_size < 1 || config.epochs < 1)
    throw std::invalid_argument("train: batch size and epochs must be positive");
  if (!(config.learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
  if (!(config.val_fraction >= 0.0 && config.val_fraction < 1.0))
    throw std::invalid_argument("train: val fraction must be in [0, 1)");
  if (config.v_scale_kmph != model.v_scale_kmph)
    throw std::invalid_argument("train: config v_scale differs from the model's");
  for (const auto& s : samples) {
    if (s.input.grid.nx != samples[0].input.grid.nx ||
        s.input.grid.nt != samples[0].input.grid.nt)
      throw std::invalid_argument("train: samples have mixed window shapes");
    if (s.target.grid.nx != s.input.grid.nx || s.target.grid.nt != s.input.grid.nt)
      throw std::invalid_argument("train: sample target shape differs from its input");
  }

  const std::size_t n = samples.size();
  std::vector<nn::Tensor3<T>> inputs(n), targets(n);
  for (std::size_t k = 0; k < n; ++k) {
    inputs[k] = nn::to_input_tensor<T>(samples[k].input);
    targets[k] = nn::to_target_tensor<T>(samples[k].target, config.v_scale_kmph);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RngEngine split_rng = seeded_stream(config.seed, 1);
  shuffle(order, split_rng);
  std::size_t n_val = static_cast<std::size_t>(std::floor(config.val_fraction * static_cast<double>(n)));
  std::vector<std::size_t> val_idx(order.end() - n_val, order.end());
  std::vector<std::size_t> train_idx(order.begin(), order.end() - n_val);
  if (val_idx.empty()) val_idx = train_idx;

  nn::AdamConfig<T> adam_cfg;
  adam_cfg.lr = static_cast<T>(config.learning_rate);
  nn::AdamState<T> adam = nn::AdamState<T>::init(model, adam_cfg);
  RngEngine epoch_rng = seeded_stream(config.seed, 2);

  TrainResult<T> result;
  result.val_indices = val_idx;
  double best_val = std::numeric_limits<double>::infinity();

  std::vector<nn::ParamGrads<T>> slot_grads(config.batch_size);
  std::vector<double> slot_loss(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) shuffle(train_idx, epoch_rng);

    double train_loss_sum = 0.0;
    for (std::size_t start = 0; start < train_idx.size(); start += config.batch_size) {
      int bn = static_cast<int>(std::min<std::size_t>(config.batch_size, train_idx.size() - start));
#pragma omp parallel for schedule(static)
      for (int slot = 0; slot < bn; ++slot) {
        std::size_t idx = train_idx[start + slot];
        slot_loss[slot] =
            nn::loss_and_gradients(model, inputs[idx], targets[idx], slot_grads[slot]);
      }
      nn::ParamGrads<T> batch = nn::ParamGrads<T>::zeros_like(model);
      T inv = T(1) / static_cast<T>(bn);
      for (int slot = 0; slot < bn; ++slot) {
        batch.add(slot_grads[slot], inv);
        train_loss_sum += slot_loss[slot];
      }
      if (!std::isfinite(train_loss_sum))
        throw std::runtime_error("train: loss became non-finite in epoch " +
                                 std::to_string(epoch));
      nn::adam_project_step(model, batch, adam);
    }

    double val_loss_sum = 0.0;
    for (std::size_t idx : val_idx) {
      nn::Tensor3<T> out = nn::forward_scaled(model, inputs[idx]);
      val_loss_sum += static_cast<double>(nn::mse_scaled(out, targets[idx]));
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = train_loss_sum / static_cast<double>(train_idx.size());
    stats.val_loss = val_loss_sum / static_cast<double>(val_idx.size());
    stats.val_rmse_kmph = std::sqrt(stats.val_loss) * config.v_scale_kmph;
    result.history.push_back(stats);

    if (stats.val_loss < best_val) {
      best_val = stats.val_loss;
      result.model = model;
      result.best_epoch = epoch;
    }
  }
  return result;
}

template TrainResult<float> train<float>(nn::ConvModel<float>, std::span<const Sample>,
                                         const TrainConfig&);
template TrainResult<double> train<double>(nn::ConvModel<double>, std::span<const Sample>,
                                           const TrainConfig&);

void write_history_csv(std::span<const EpochStats> history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write history file: " + path.string());
  out << "epoch,train_loss,val_loss,val_rmse_kmph\n";
  char buf[128];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g", e.epoch, e.train_loss, e.val_loss,
                  e.val_rmse_kmph);
    out << buf << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

} // namespace tse
