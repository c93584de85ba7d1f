#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tse/groundtruth.hpp"
#include "tse/grid.hpp"
#include "tse/nn/model.hpp"
#include "tse/probes.hpp"

namespace tse {

/// Traffic condition label carried by frames and samples; used for
/// per-regime evaluation breakdowns, never by the model itself.
enum class Regime { free_flow, slow_moving, congested };

const char* regime_name(Regime regime);
Regime regime_from_name(const std::string& name);

/// One training example: rasterized probe input and the dense target field
/// on the same window grid.
struct Sample {
  ProbeInputTensor input;
  SpeedField target;
  Regime regime = Regime::free_flow;
  double penetration = 0.0;
};

/// A long recorded stretch from which training windows are sliced.
struct Frame {
  std::vector<Trajectory> trajectories;
  SpaceTimeGrid grid;
  Regime regime = Regime::free_flow;
};

struct DatasetConfig {
  std::vector<double> penetration_rates{0.05};
  std::vector<std::uint64_t> probe_seeds{1};
  int window_nt = 60;          ///< window extent in time cells
  double stride_t_s = 2.0;     ///< window start spacing
  InterpolationParams interp{};
  double v_scale_kmph = 128.0;
  std::uint64_t shuffle_seed = 0;
};

/// Slices each frame into fixed-width windows (full space extent, window_nt
/// time cells, starts stride_t_s apart), building one sample per window per
/// (penetration rate, probe seed) pair. The dense target of a frame is
/// interpolated once from all vehicles; probe inputs use only the sampled
/// subset. Frames shorter than one window are skipped with a warning. The
/// result is shuffled by shuffle_seed.
std::vector<Sample> build_dataset(std::span<const Frame> frames, const DatasetConfig& config,
                                  std::vector<std::string>* warnings = nullptr);

/// Draws from several datasets in the given proportions, without
/// replacement, preserving within-dataset order. The total is the largest
/// achievable while honoring the weights exactly up to rounding; a single
/// dataset with any positive weight passes through unchanged.
std::vector<Sample> mix_datasets(const std::vector<std::vector<Sample>>& datasets,
                                 std::span<const double> weights, std::uint64_t seed);

// --- dataset cache --------------------------------------------------------

void save_dataset(std::span<const Sample> samples, const std::filesystem::path& path);
std::vector<Sample> load_dataset(const std::filesystem::path& path);

// --- optimization ---------------------------------------------------------

struct TrainConfig {
  int batch_size = 32;
  int epochs = 300;
  double learning_rate = 1e-3;
  double val_fraction = 0.1; ///< held-out share; 0 evaluates on the training set
  std::uint64_t seed = 0;    ///< governs the split and epoch shuffling
  double v_scale_kmph = 128.0;
  bool shuffle = true;
};

struct EpochStats {
  int epoch = 0; ///< 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_rmse_kmph = 0.0;
};

template <typename T>
struct TrainResult {
  nn::ConvModel<T> model; ///< parameters from the best validation epoch
  std::vector<EpochStats> history;
  int best_epoch = 0;
  std::vector<std::size_t> val_indices; ///< positions in the input samples
};

/// Mini-batch Adam on the normalized squared error, with the mask
/// projection applied after every step. Batch gradients are reduced in a
/// fixed sample order, so results are bit-identical across reruns and
/// thread counts. Throws on a non-finite loss instead of continuing.
/// config.v_scale must match the model's.
template <typename T>
TrainResult<T> train(nn::ConvModel<T> model, std::span<const Sample> samples,
                     const TrainConfig& config);

void write_history_csv(std::span<const EpochStats> history, const std::filesystem::path& path);

} // namespace tse
