#include "tse/ensemble.hpp"

#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace tse {

template <typename T>
SpeedField ensemble_predict(const Ensemble<T>& ensemble, const ProbeInputTensor& probe,
                            std::span<const double> weights) {
  if (ensemble.members.empty()) throw std::invalid_argument("ensemble: no members");
  if (!weights.empty() && weights.size() != ensemble.members.size())
    throw std::invalid_argument("ensemble: need one weight per member");
  double wsum = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw std::invalid_argument("ensemble: weights must be positive");
    wsum += w;
  }

  SpeedField mean = SpeedField::zeros(probe.grid);
  for (std::size_t m = 0; m < ensemble.members.size(); ++m) {
    SpeedField field = nn::infer(ensemble.members[m].model, probe);
    double w = weights.empty() ? 1.0 / static_cast<double>(ensemble.members.size())
                               : weights[m] / wsum;
    for (std::size_t k = 0; k < mean.values.size(); ++k) mean.values[k] += w * field.values[k];
  }
  return mean;
}

template SpeedField ensemble_predict<float>(const Ensemble<float>&, const ProbeInputTensor&,
                                            std::span<const double>);
template SpeedField ensemble_predict<double>(const Ensemble<double>&, const ProbeInputTensor&,
                                             std::span<const double>);

void save_ensemble_manifest(std::span<const EnsembleEntry> entries,
                            const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "tse-ensemble";
  j["version"] = 1;
  nlohmann::json members = nlohmann::json::array();
  for (const auto& e : entries)
    members.push_back({{"model_path", e.model_path}, {"penetration", e.penetration}});
  j["members"] = std::move(members);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write ensemble manifest: " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<EnsembleEntry> read_ensemble_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ensemble manifest: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    if (j.at("format").get<std::string>() != "tse-ensemble")
      throw std::runtime_error("not an ensemble manifest");
    if (j.at("version").get<int>() != 1)
      throw std::runtime_error("unsupported ensemble manifest version");
    std::vector<EnsembleEntry> entries;
    for (const auto& e : j.at("members"))
      entries.push_back({e.at("model_path").get<std::string>(),
                         e.at("penetration").get<double>()});
    if (entries.empty()) throw std::runtime_error("ensemble manifest lists no members");
    return entries;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("ensemble manifest " + path.string() + ": " + e.what());
  }
}

template <typename T>
Ensemble<T> load_ensemble(const std::filesystem::path& manifest_path) {
  Ensemble<T> ensemble;
  for (const auto& entry : read_ensemble_manifest(manifest_path)) {
    std::filesystem::path model_path(entry.model_path);
    if (model_path.is_relative()) model_path = manifest_path.parent_path() / model_path;
    ensemble.members.push_back({nn::load_model<T>(model_path), entry.penetration});
  }
  return ensemble;
}

template Ensemble<float> load_ensemble<float>(const std::filesystem::path&);
template Ensemble<double> load_ensemble<double>(const std::filesystem::path&);

} // namespace tse
