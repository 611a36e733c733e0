#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "mtsf/model/forecast_model.hpp"

namespace mtsf {

/// Checkpoint layout (JSON, one object):
///
///   {"format": "mtsf-checkpoint", "version": 1,
///    "config": {...model config...},
///    "parameters": [{"name": str, "shape": [int], "data": [float]}, ...],
///    "extra": {...}}            // optional, e.g. the fitted normalizer
///
/// Parameters appear in construction order. Doubles are written with
/// round-trip precision, so load(save(m)) reproduces m bit for bit.
inline constexpr const char* kCheckpointFormat = "mtsf-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ForecastModel model;
  nlohmann::json extra;
};

nlohmann::json checkpoint_to_json(const ForecastModel& model, const nlohmann::json& extra = nullptr);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const ForecastModel& model,
                     const nlohmann::json& extra = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mtsf
