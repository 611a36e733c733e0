#include "mtsf/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "mtsf/ops.hpp"

namespace mtsf {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<std::vector<double>> snapshot(const ForecastModel& model) {
  std::vector<std::vector<double>> out;
  for (const auto& p : model.parameters()) {
    const auto d = p.tensor.data();
    out.emplace_back(d.begin(), d.end());
  }
  return out;
}

void restore(ForecastModel& model, const std::vector<std::vector<double>>& saved) {
  auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::copy(saved[i].begin(), saved[i].end(), params[i].tensor.mutable_data().begin());
    params[i].tensor.zero_grad();
  }
}

const char* to_string(StopRule r) { return r == StopRule::kConsecutive ? "consecutive" : "windowed"; }

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be a finite nonnegative number");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  if (max_epochs == 0) throw std::invalid_argument("max_epochs must be at least 1");
  if (patience == 0) throw std::invalid_argument("patience must be at least 1");
}

StampFeatures stamps_of(const SeriesWindow& w) { return {w.x_stamps, w.y_stamps}; }

double train_epoch(ForecastModel& model, std::span<const SeriesWindow> windows, const TrainConfig& cfg,
                   std::mt19937_64& rng) {
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);

  auto params = model.parameter_tensors();
  double total = 0.0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
    const double weight = 1.0 / static_cast<double>(stop - start);
    // One tape per window; gradients accumulate across the batch until the step.
    for (std::size_t i = start; i < stop; ++i) {
      const SeriesWindow& w = windows[order[i]];
      double loss_value = 0.0;
      try {
        Tape tape;
        const Tensor loss = mse_loss(model.forecast(w.x, stamps_of(w)), w.y);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) return std::numeric_limits<double>::quiet_NaN();
        tape.backward(scale(loss, weight));
      } catch (const NonFiniteError&) {
        return std::numeric_limits<double>::quiet_NaN();
      }
      total += loss_value;
    }
    sgd_step(params, cfg.lr);
  }
  return total / static_cast<double>(windows.size());
}

TrainState train(ForecastModel& model, std::span<const SeriesWindow> train_set, std::span<const SeriesWindow> valid_set,
                 const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("training set is empty");
  if (valid_set.empty()) throw std::invalid_argument("validation set is empty");

  const auto start = Clock::now();
  std::mt19937_64 rng(cfg.seed);
  TrainState state;
  state.best_valid = std::numeric_limits<double>::infinity();
  auto best_params = snapshot(model);
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_epoch(model, train_set, cfg, rng);
    if (!std::isfinite(rec.train_loss)) {
      state.diverged = true;
      state.stop_reason = "non-finite training loss in epoch " + std::to_string(epoch);
      break;
    }
    double valid = 0.0;
    try {
      valid = evaluate(model, valid_set).mse;
    } catch (const NonFiniteError&) {
      valid = std::numeric_limits<double>::quiet_NaN();
    }
    rec.valid_loss = valid;
    rec.seconds = seconds_since(epoch_start);
    state.history.push_back(rec);
    if (!std::isfinite(valid)) {
      state.diverged = true;
      state.stop_reason = "non-finite validation loss in epoch " + std::to_string(epoch);
      break;
    }
    if (on_epoch) on_epoch(epoch, model);

    if (valid < state.best_valid) {
      state.best_valid = valid;
      state.best_epoch = epoch;
      best_params = snapshot(model);
      since_best = 0;
    } else {
      ++since_best;
    }
    if (!cfg.early_stopping) continue;
    if (cfg.stop_rule == StopRule::kConsecutive && since_best >= cfg.patience) {
      state.stop_reason = "no validation improvement for " + std::to_string(cfg.patience) + " epochs";
      break;
    }
    if (cfg.stop_rule == StopRule::kWindowed && epoch > cfg.patience &&
        valid >= state.history[epoch - 1 - cfg.patience].valid_loss) {
      state.stop_reason = "validation loss not below its value " + std::to_string(cfg.patience) + " epochs earlier";
      break;
    }
  }
  if (state.stop_reason.empty()) state.stop_reason = "reached max_epochs";
  restore(model, best_params);
  state.wall_seconds = seconds_since(start);
  return state;
}

Metrics evaluate(const ForecastModel& model, std::span<const SeriesWindow> windows) {
  Metrics m;
  m.param_count = count_params(model);
  m.n_windows = windows.size();
  if (windows.empty()) return m;
  double se = 0.0, ae = 0.0, ms = 0.0;
  std::size_t n = 0;
  for (const auto& w : windows) {
    const auto t0 = Clock::now();
    const Tensor pred = model.forecast(w.x, stamps_of(w));
    ms += std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    const auto p = pred.data();
    const auto y = w.y.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = p[i] - y[i];
      se += d * d;
      ae += std::abs(d);
    }
    n += p.size();
  }
  m.mse = se / static_cast<double>(n);
  m.mae = ae / static_cast<double>(n);
  m.inference_time_ms = ms / static_cast<double>(windows.size());
  return m;
}

std::size_t count_params(const ForecastModel& model) { return model.parameter_count(); }

LrSearchResult search_lr(const ModelConfig& model_cfg, std::span<const SeriesWindow> train_set,
                         std::span<const SeriesWindow> valid_set, const TrainConfig& base,
                         std::span<const double> grid) {
  if (grid.empty()) throw std::invalid_argument("learning-rate grid is empty");
  LrSearchResult result;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    TrainConfig cfg = base;
    cfg.lr = grid[i];
    ForecastModel model(model_cfg);
    TrainState state = train(model, train_set, valid_set, cfg);
    const double score = state.best_epoch > 0 ? state.best_valid : std::numeric_limits<double>::infinity();
    if (score < best || !result.model) {
      if (score < best) best = score;
      result.best = i;
      result.model.emplace(std::move(model));
    }
    result.trials.push_back({grid[i], std::move(state)});
  }
  return result;
}

nlohmann::json to_json(const Metrics& m, bool include_timing) {
  nlohmann::json j = {{"mse", m.mse}, {"mae", m.mae}, {"n_windows", m.n_windows}, {"param_count", m.param_count}};
  if (include_timing) j["inference_time_ms"] = m.inference_time_ms;
  return j;
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"lr", cfg.lr},
          {"batch_size", cfg.batch_size},
          {"max_epochs", cfg.max_epochs},
          {"patience", cfg.patience},
          {"seed", cfg.seed},
          {"shuffle", cfg.shuffle},
          {"early_stopping", cfg.early_stopping},
          {"stop_rule", to_string(cfg.stop_rule)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base) {
  base.lr = j.value("lr", base.lr);
  base.batch_size = j.value("batch_size", base.batch_size);
  base.max_epochs = j.value("max_epochs", base.max_epochs);
  base.patience = j.value("patience", base.patience);
  base.seed = j.value("seed", base.seed);
  base.shuffle = j.value("shuffle", base.shuffle);
  base.early_stopping = j.value("early_stopping", base.early_stopping);
  if (j.contains("stop_rule")) {
    const auto rule = j.at("stop_rule").get<std::string>();
    if (rule == "consecutive") {
      base.stop_rule = StopRule::kConsecutive;
    } else if (rule == "windowed") {
      base.stop_rule = StopRule::kWindowed;
    } else {
      throw std::invalid_argument("unknown stop_rule '" + rule + "'");
    }
  }
  base.validate();
  return base;
}

nlohmann::json to_json(const TrainState& s, bool include_timing) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& e : s.history) {
    nlohmann::json row = {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"valid_loss", e.valid_loss}};
    if (include_timing) row["seconds"] = e.seconds;
    history.push_back(std::move(row));
  }
  nlohmann::json j = {{"history", std::move(history)},
                      {"best_epoch", s.best_epoch},
                      {"diverged", s.diverged},
                      {"stop_reason", s.stop_reason}};
  j["best_valid"] = s.best_epoch > 0 ? nlohmann::json(s.best_valid) : nlohmann::json(nullptr);
  if (include_timing) j["wall_seconds"] = s.wall_seconds;
  return j;
}

}  // namespace mtsf
