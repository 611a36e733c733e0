#include <cmath>
#include <stdexcept>

#include "mtsf/data.hpp"

namespace mtsf {

namespace {

SeriesSplit cut(const MultivariateSeries& series, std::size_t n_train, std::size_t n_valid, std::size_t n_test,
                std::size_t min_len) {
  const char* labels[] = {"train", "valid", "test"};
  const std::size_t sizes[] = {n_train, n_valid, n_test};
  for (int i = 0; i < 3; ++i) {
    if (sizes[i] < min_len) {
      throw std::invalid_argument(std::string(labels[i]) + " split has " + std::to_string(sizes[i]) +
                                  " rows, need at least " + std::to_string(min_len));
    }
  }
  if (n_train + n_valid + n_test > series.length()) throw std::invalid_argument("split longer than the series");
  SeriesSplit out;
  out.train = series.slice(0, n_train);
  out.valid = series.slice(n_train, n_valid);
  out.test = series.slice(n_train + n_valid, n_test);
  out.valid_begin = n_train;
  out.test_begin = n_train + n_valid;
  return out;
}

}  // namespace

SeriesSplit split(const MultivariateSeries& series, const SplitRatios& ratios, std::size_t min_len) {
  if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9) {
    throw std::invalid_argument("split ratios must be nonnegative and sum to 1");
  }
  const double t = static_cast<double>(series.length());
  const auto n_train = static_cast<std::size_t>(std::floor(t * ratios.train + 1e-9));
  const auto n_valid = static_cast<std::size_t>(std::floor(t * ratios.valid + 1e-9));
  return cut(series, n_train, n_valid, series.length() - n_train - n_valid, min_len);
}

SeriesSplit split_calendar(const MultivariateSeries& series, std::size_t rows_per_day, std::size_t min_len) {
  const std::size_t month = 30 * rows_per_day;
  return cut(series, 12 * month, 4 * month, 4 * month, min_len);
}

Normalizer::Normalizer(std::vector<double> mean, std::vector<double> stddev)
    : mean_(std::move(mean)), std_(std::move(stddev)) {}

Normalizer Normalizer::fit(const MultivariateSeries& series) {
  const std::size_t t = series.length();
  const std::size_t k = series.num_vars();
  if (t == 0) throw std::invalid_argument("cannot fit a normalizer on an empty series");
  std::vector<double> mean(k, 0.0), sd(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < t; ++r) s += series.values(r, c);
    mean[c] = s / static_cast<double>(t);
    double ss = 0.0;
    for (std::size_t r = 0; r < t; ++r) {
      const double d = series.values(r, c) - mean[c];
      ss += d * d;
    }
    sd[c] = std::sqrt(ss / static_cast<double>(t));
    if (!(sd[c] > 0.0)) {
      const std::string name = c < series.names.size() ? series.names[c] : std::to_string(c);
      throw std::invalid_argument("variable '" + name + "' is constant on the training split");
    }
  }
  return {std::move(mean), std::move(sd)};
}

MultivariateSeries Normalizer::apply(const MultivariateSeries& series, bool forward) const {
  if (series.num_vars() != mean_.size()) {
    throw DimensionError("normalizer fitted on " + std::to_string(mean_.size()) + " variables, series has " +
                         std::to_string(series.num_vars()));
  }
  MultivariateSeries out = series;
  out.values = series.values.clone();
  const std::size_t k = mean_.size();
  for (std::size_t r = 0; r < out.length(); ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      double& v = out.values(r, c);
      v = forward ? (v - mean_[c]) / std_[c] : v * std_[c] + mean_[c];
    }
  }
  return out;
}

MultivariateSeries Normalizer::transform(const MultivariateSeries& series) const { return apply(series, true); }
MultivariateSeries Normalizer::inverse(const MultivariateSeries& series) const { return apply(series, false); }

nlohmann::json Normalizer::to_json() const { return {{"mean", mean_}, {"std", std_}}; }

Normalizer Normalizer::from_json(const nlohmann::json& j) {
  auto mean = j.at("mean").get<std::vector<double>>();
  auto sd = j.at("std").get<std::vector<double>>();
  if (mean.size() != sd.size()) throw std::invalid_argument("normalizer mean/std length mismatch");
  for (double s : sd) {
    if (!(s > 0.0)) throw std::invalid_argument("normalizer std must be positive");
  }
  return {std::move(mean), std::move(sd)};
}

std::size_t window_count(std::size_t length, const WindowSpec& spec) {
  if (spec.input_len == 0 || spec.horizon == 0 || spec.stride == 0) {
    throw std::invalid_argument("window L, H and stride must be at least 1");
  }
  const std::size_t span = spec.input_len + spec.horizon;
  if (length < span) {
    throw std::invalid_argument("series of length " + std::to_string(length) + " is shorter than L + H = " +
                                std::to_string(span));
  }
  return (length - span) / spec.stride + 1;
}

std::vector<SeriesWindow> make_windows(const MultivariateSeries& series, const WindowSpec& spec) {
  const std::size_t n = window_count(series.length(), spec);
  const std::size_t k = series.num_vars();
  const bool stamped = !series.timestamps.empty();
  auto stamp_block = [&](std::size_t begin, std::size_t count) {
    Tensor s({count, 4});
    for (std::size_t i = 0; i < count; ++i) {
      const auto f = stamp_features(series.timestamps[begin + i]);
      for (std::size_t j = 0; j < 4; ++j) s(i, j) = f[j];
    }
    return s;
  };
  std::vector<SeriesWindow> windows;
  windows.reserve(n);
  for (std::size_t w = 0; w < n; ++w) {
    const std::size_t origin = w * spec.stride;
    SeriesWindow win;
    win.origin = origin;
    win.x = Tensor({k, spec.input_len});
    win.y = Tensor({k, spec.horizon});
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t t = 0; t < spec.input_len; ++t) win.x(c, t) = series.values(origin + t, c);
      for (std::size_t t = 0; t < spec.horizon; ++t) win.y(c, t) = series.values(origin + spec.input_len + t, c);
    }
    if (stamped) {
      win.x_stamps = stamp_block(origin, spec.input_len);
      win.y_stamps = stamp_block(origin + spec.input_len, spec.horizon);
    }
    windows.push_back(std::move(win));
  }
  return windows;
}

}  // namespace mtsf
