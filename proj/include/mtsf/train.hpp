#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtsf/data.hpp"
#include "mtsf/model/forecast_model.hpp"

namespace mtsf {

/// How "no improvement for `patience` epochs" is read.
///   kConsecutive: stop once `patience` epochs in a row fail to beat the best.
///   kWindowed:    stop at epoch e when valid(e) >= valid(e - patience).
enum class StopRule { kConsecutive, kWindowed };

struct TrainConfig {
  double lr = 0.01;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10;
  std::size_t patience = 3;
  std::uint64_t seed = 0;
  bool shuffle = true;
  bool early_stopping = true;
  StopRule stop_rule = StopRule::kConsecutive;

  void validate() const;
};

inline constexpr double kDefaultLrGrid[] = {0.5, 0.1, 0.05, 0.01, 0.001};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double seconds = 0.0;
};

struct TrainState {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 0 when no epoch finished with a finite loss
  double best_valid = 0.0;
  bool diverged = false;
  std::string stop_reason;
  double wall_seconds = 0.0;
};

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t n_windows = 0;
  double inference_time_ms = 0.0;
  std::size_t param_count = 0;
};

/// Called after every finished epoch with the current (not yet restored) model.
using EpochCallback = std::function<void(std::size_t epoch, const ForecastModel& model)>;

StampFeatures stamps_of(const SeriesWindow& w);

/// One pass over the windows in (optionally shuffled) batches. Returns the
/// mean per-window training MSE, or NaN as soon as a loss is non-finite.
double train_epoch(ForecastModel& model, std::span<const SeriesWindow> windows, const TrainConfig& cfg,
                   std::mt19937_64& rng);

/// SGD with validation-based early stopping. The best-validation parameters
/// are restored before returning. A non-finite loss ends training early.
TrainState train(ForecastModel& model, std::span<const SeriesWindow> train_set, std::span<const SeriesWindow> valid_set,
                 const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// MSE and MAE over every element of every window. Timing covers the forward
/// pass only.
Metrics evaluate(const ForecastModel& model, std::span<const SeriesWindow> windows);

std::size_t count_params(const ForecastModel& model);

struct LrTrial {
  double lr = 0.0;
  TrainState state;
};

struct LrSearchResult {
  std::vector<LrTrial> trials;
  std::size_t best = 0;
  std::optional<ForecastModel> model;  // trained with trials[best].lr
};

/// Trains one fresh model per learning rate and keeps the one with the lowest
/// best-epoch validation MSE. Ties go to the earlier grid entry.
LrSearchResult search_lr(const ModelConfig& model_cfg, std::span<const SeriesWindow> train_set,
                         std::span<const SeriesWindow> valid_set, const TrainConfig& base,
                         std::span<const double> grid = kDefaultLrGrid);

/// Timing fields are left out when include_timing is false, which makes the
/// result a pure function of seeds and inputs.
nlohmann::json to_json(const Metrics& m, bool include_timing = true);
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
nlohmann::json to_json(const TrainState& s, bool include_timing = true);

}  // namespace mtsf
