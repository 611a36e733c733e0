#include "mtsf/model/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace mtsf {

nlohmann::json checkpoint_to_json(const ForecastModel& model, const nlohmann::json& extra) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : model.parameters()) {
    const auto values = p.tensor.data();
    params.push_back({{"name", p.name},
                      {"shape", p.tensor.shape()},
                      {"data", std::vector<double>(values.begin(), values.end())}});
  }
  nlohmann::json j = {{"format", kCheckpointFormat},
                      {"version", kCheckpointVersion},
                      {"config", to_json(model.config())},
                      {"parameters", std::move(params)}};
  if (!extra.is_null()) j["extra"] = extra;
  return j;
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat) {
    throw std::runtime_error("not a checkpoint file");
  }
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + j.at("version").dump());
  }
  ForecastModel model(model_config_from_json(j.at("config")));
  const auto& stored = j.at("parameters");
  auto& params = model.parameters();
  if (stored.size() != params.size()) {
    throw std::runtime_error("checkpoint has " + std::to_string(stored.size()) + " parameters, model expects " +
                             std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = stored[i];
    const std::string name = entry.at("name").get<std::string>();
    if (name != params[i].name) {
      throw std::runtime_error("checkpoint parameter " + std::to_string(i) + " is '" + name + "', expected '" +
                               params[i].name + "'");
    }
    const Shape shape = entry.at("shape").get<Shape>();
    if (shape != params[i].tensor.shape()) {
      throw DimensionError("parameter " + name + " has shape " + shape_to_string(shape) + ", model expects " +
                           shape_to_string(params[i].tensor.shape()));
    }
    const auto values = entry.at("data").get<std::vector<double>>();
    if (values.size() != params[i].tensor.numel()) throw std::runtime_error("parameter " + name + " data length");
    std::copy(values.begin(), values.end(), params[i].tensor.mutable_data().begin());
  }
  return {std::move(model), j.value("extra", nlohmann::json())};
}

void save_checkpoint(const std::filesystem::path& path, const ForecastModel& model, const nlohmann::json& extra) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << checkpoint_to_json(model, extra).dump() << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace mtsf
