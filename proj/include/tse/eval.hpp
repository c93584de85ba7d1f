#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tse/grid.hpp"
#include "tse/nn/model.hpp"
#include "tse/training.hpp"

namespace tse {

/// Root-mean-square difference in kmph. Grids must match exactly.
double rmse(const SpeedField& a, const SpeedField& b);

struct RegimeRmse {
  std::string label; ///< regime name, or "all" for the combined row
  int n_samples = 0;
  double mean_rmse_kmph = 0.0;
  double std_rmse_kmph = 0.0; ///< population standard deviation over samples
};

/// Per-sample reconstruction RMSE aggregated by traffic regime, in the
/// fixed order free_flow, slow_moving, congested (absent regimes omitted),
/// with a final "all" row.
template <typename T>
std::vector<RegimeRmse> evaluate_by_regime(const nn::ConvModel<T>& model,
                                           std::span<const Sample> samples);

/// Dominant propagation speed of the structures in a speed field, found by
/// shifting column pairs along candidate wave speeds (-40..120 kmph in 0.5
/// steps) and scoring normalized cross-correlation. Positive speeds move
/// downstream. Returns nullopt when the field has no usable structure
/// (constant field, or too small to form column pairs).
std::optional<double> wave_speed_estimate_kmph(const SpeedField& field);

// --- exports --------------------------------------------------------------

/// Header line `x0_m,t0_s,dx_m,dt_s,nx,nt`, then nx rows of nt
/// comma-separated speeds (row i is fixed space, columns advance in time).
void export_field_csv(const SpeedField& field, const std::filesystem::path& path);
SpeedField import_field_csv(const std::filesystem::path& path);

/// Binary PPM heatmap. Rows run from the downstream end (top) to x0
/// (bottom), columns left to right in time. Speeds are mapped on [0, 130]
/// kmph through a fixed red-yellow-green ramp with anchors at
/// 0 -> (165,0,38), 32.5 -> (244,109,67), 65 -> (254,224,144),
/// 97.5 -> (166,217,106), 130 -> (26,152,80), linearly interpolated.
void export_field_ppm(const SpeedField& field, const std::filesystem::path& path);

/// Tile size for flow/density aggregation.
struct TileSpec {
  double dx_m = 50.0;
  double dt_s = 30.0;
};

/// Tiles the region (anchored at its lower corner; partial tiles at the far
/// edges are dropped) and writes one `t_center_s,x_center_m,q_veh_per_hr,
/// k_veh_per_km` row per tile from the generalized flow/density estimators.
void export_flow_density_csv(std::span<const Trajectory> trajectories, const Region& region,
                             const TileSpec& tile, const std::filesystem::path& path);

} // namespace tse
