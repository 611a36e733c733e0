#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mtsf/diagnostics.hpp"

namespace mtsf {

Tensor euclid_matrix(const Tensor& y) {
  if (y.rank() != 2) throw DimensionError("euclid_matrix expects a K x H matrix, got " + shape_to_string(y.shape()));
  const std::size_t k = y.rows();
  const std::size_t h = y.cols();
  Tensor e({h, h});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = i + 1; j < h; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double d = y(c, i) - y(c, j);
        s += d * d;
      }
      e(i, j) = e(j, i) = std::sqrt(s);
    }
  }
  return e;
}

SimilarityMap token_sim(const Tensor& y, const std::string& source) {
  Tensor e = euclid_matrix(y);
  const std::size_t h = e.rows();
  for (std::size_t i = 0; i < h; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < h; ++j) mx = std::max(mx, e(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < h; ++j) z += std::exp(e(i, j) - mx);
    for (std::size_t j = 0; j < h; ++j) e(i, j) = -std::exp(e(i, j) - mx) / z;
  }
  SimilarityMap map;
  map.values = e;
  map.source = source;
  map.horizon = h;
  return map;
}

SimilarityMap average_maps(std::span<const SimilarityMap> maps) {
  if (maps.empty()) throw std::invalid_argument("no similarity maps to average");
  SimilarityMap out = maps.front();
  out.values = Tensor(maps.front().values.shape());
  out.n_windows = 0;
  auto acc = out.values.mutable_data();
  for (const auto& m : maps) {
    if (m.values.shape() != out.values.shape()) {
      throw DimensionError("cannot average maps of shape " + shape_to_string(m.values.shape()) + " and " +
                           shape_to_string(out.values.shape()));
    }
    const auto v = m.values.data();
    for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
    out.n_windows += m.n_windows;
  }
  for (double& v : acc) v /= static_cast<double>(maps.size());
  return out;
}

Tensor residual(const Tensor& x, ResidualMode mode) {
  if (x.rank() != 2) throw DimensionError("residual expects a matrix, got " + shape_to_string(x.shape()));
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  Tensor out = x.clone();
  std::vector<double> column(m);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t r = 0; r < m; ++r) column[r] = x(r, c);
    double shift = 0.0;
    if (mode == ResidualMode::kMean) {
      for (double v : column) shift += v;
      shift /= static_cast<double>(m);
    } else {
      std::sort(column.begin(), column.end());
      shift = m % 2 == 1 ? column[m / 2] : 0.5 * (column[m / 2 - 1] + column[m / 2]);
    }
    for (std::size_t r = 0; r < m; ++r) out(r, c) -= shift;
  }
  return out;
}

double norm_l1(const Tensor& x) {
  double best = 0.0;
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) s += std::abs(x(r, c));
    best = std::max(best, s);
  }
  return best;
}

double norm_linf(const Tensor& x) {
  double best = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) s += std::abs(x(r, c));
    best = std::max(best, s);
  }
  return best;
}

double composite_norm(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("composite_norm expects a matrix, got " + shape_to_string(x.shape()));
  // Product of roots rather than root of product: residuals deep in a
  // collapsing stack would underflow the product.
  return std::sqrt(norm_l1(x)) * std::sqrt(norm_linf(x));
}

double tu_ratio(const Tensor& y, ResidualMode mode) {
  if (y.rank() != 2) throw DimensionError("tu_ratio expects a K x H matrix, got " + shape_to_string(y.shape()));
  Tensor tokens({y.cols(), y.rows()});
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = 0; c < y.cols(); ++c) tokens(c, r) = y(r, c);
  const double denom = composite_norm(tokens);
  if (denom == 0.0) throw std::invalid_argument("tu_ratio of an all-zero matrix is undefined");
  return composite_norm(residual(tokens, mode)) / denom;
}

double mean_tu(const ForecastModel* model, std::span<const SeriesWindow> windows, ResidualMode mode) {
  if (windows.empty()) throw std::invalid_argument("mean_tu needs at least one window");
  double total = 0.0;
  for (const auto& w : windows) {
    total += model ? tu_ratio(model->forecast(w.x, stamps_of(w)), mode) : tu_ratio(w.y, mode);
  }
  return total / static_cast<double>(windows.size());
}

TokenUniformityReport tu_training_study(std::span<const TuStudyEntry> entries,
                                        std::span<const SeriesWindow> train_set,
                                        std::span<const SeriesWindow> test_set, std::size_t epochs,
                                        const TrainConfig& base, ResidualMode mode) {
  if (entries.size() < 2) throw std::invalid_argument("TU study needs at least two variants");
  if (epochs == 0) throw std::invalid_argument("TU study needs at least one epoch");
  if (train_set.empty() || test_set.empty()) throw std::invalid_argument("TU study needs train and test windows");

  TokenUniformityReport report;
  report.epochs = epochs;
  for (std::size_t e = 0; e < epochs; ++e) {
    report.gt_train.push_back(mean_tu(nullptr, train_set, mode));
    report.gt_test.push_back(mean_tu(nullptr, test_set, mode));
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& entry : entries) {
    TrainConfig cfg = base;
    cfg.lr = entry.lr;
    cfg.validate();
    ForecastModel model(entry.config);
    std::mt19937_64 rng(cfg.seed);
    TuCurve curve;
    curve.variant = std::string(to_string(entry.config.variant()));
    curve.lr = entry.lr;
    for (std::size_t e = 0; e < epochs; ++e) {
      if (!curve.diverged && std::isfinite(train_epoch(model, train_set, cfg, rng))) {
        curve.pred_train.push_back(mean_tu(&model, train_set, mode));
        curve.pred_test.push_back(mean_tu(&model, test_set, mode));
      } else {
        curve.diverged = true;
        curve.pred_train.push_back(nan);
        curve.pred_test.push_back(nan);
      }
    }
    report.curves.push_back(std::move(curve));
  }
  return report;
}

nlohmann::json to_json(const SimilarityMap& map) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < map.values.rows(); ++i) {
    const auto row = map.values.data().subspan(i * map.values.cols(), map.values.cols());
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return {{"source", map.source},
          {"dataset", map.dataset},
          {"horizon", map.horizon},
          {"n_windows", map.n_windows},
          {"values", std::move(rows)}};
}

nlohmann::json to_json(const TokenUniformityReport& report) {
  nlohmann::json curves = nlohmann::json::array();
  for (const auto& c : report.curves) {
    curves.push_back({{"variant", c.variant},
                      {"lr", c.lr},
                      {"diverged", c.diverged},
                      {"tu_pred_train", c.pred_train},
                      {"tu_pred_test", c.pred_test}});
  }
  return {{"epochs", report.epochs},
          {"tu_gt_train", report.gt_train},
          {"tu_gt_test", report.gt_test},
          {"curves", std::move(curves)}};
}

}  // namespace mtsf
