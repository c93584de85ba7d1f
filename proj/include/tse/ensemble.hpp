#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tse/nn/model.hpp"
#include "tse/probes.hpp"

namespace tse {

/// A set of models trained for different probe penetration rates, combined
/// at inference time. The rate tags document what each member was trained
/// for; prediction itself never reads them.
template <typename T>
struct Ensemble {
  struct Member {
    nn::ConvModel<T> model;
    double penetration = 0.0;
  };
  std::vector<Member> members;
};

/// Averages the members' physical-unit predictions cell by cell. With
/// weights given (one positive value per member) a weighted mean is used;
/// the default is equal weighting. A single-member ensemble reproduces that
/// member's prediction exactly.
template <typename T>
SpeedField ensemble_predict(const Ensemble<T>& ensemble, const ProbeInputTensor& probe,
                            std::span<const double> weights = {});

/// Manifest entry naming a stored model and its penetration tag.
struct EnsembleEntry {
  std::string model_path; ///< relative paths resolve against the manifest
  double penetration = 0.0;
};

void save_ensemble_manifest(std::span<const EnsembleEntry> entries,
                            const std::filesystem::path& path);
std::vector<EnsembleEntry> read_ensemble_manifest(const std::filesystem::path& path);

/// Reads the manifest and loads every member model.
template <typename T>
Ensemble<T> load_ensemble(const std::filesystem::path& manifest_path);

} // namespace tse
