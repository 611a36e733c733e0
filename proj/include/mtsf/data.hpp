#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mtsf/tensor.hpp"

namespace mtsf {

/// A calendar instant with one-second resolution, no time zone.
struct Timestamp {
  int year = 1970;
  int month = 1;  // 1..12
  int day = 1;    // 1..31
  int hour = 0;
  int minute = 0;
  int second = 0;

  auto operator<=>(const Timestamp&) const = default;
};

/// Accepts "YYYY-MM-DD", "YYYY-MM-DD HH:MM" and "YYYY-MM-DD HH:MM:SS", with
/// either a space or 'T' between date and time. Returns nullopt on anything else.
std::optional<Timestamp> parse_timestamp(std::string_view text);
std::string format_timestamp(const Timestamp& ts);
/// Monday = 0 ... Sunday = 6.
int weekday(const Timestamp& ts);
Timestamp add_seconds(const Timestamp& ts, std::int64_t seconds);

/// [month, day, weekday, hour], each mapped affinely onto [-0.5, 0.5].
std::array<double, 4> stamp_features(const Timestamp& ts);

/// T x K values plus timestamps (empty or length T) and K variable names.
struct MultivariateSeries {
  Tensor values;
  std::vector<Timestamp> timestamps;
  std::vector<std::string> names;

  std::size_t length() const { return values.defined() ? values.rows() : 0; }
  std::size_t num_vars() const { return values.defined() ? values.cols() : 0; }
  MultivariateSeries slice(std::size_t begin, std::size_t count) const;
  /// Throws std::invalid_argument on K < 2, a names/timestamps size mismatch,
  /// or timestamps that are not strictly increasing.
  void validate() const;
};

/// Raised by the CSV reader. row() counts data rows from 1 (the header is
/// row 0); column() is 1-based with the date column first, 0 when not applicable.
class CsvError : public std::runtime_error {
 public:
  CsvError(const std::string& what, std::size_t row, std::size_t column)
      : std::runtime_error(what), row_(row), column_(column) {}
  std::size_t row() const { return row_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

/// Header row required, first column named "date", at least two numeric
/// columns after it. Empty cells are rejected rather than imputed.
MultivariateSeries parse_csv(std::istream& in, const std::string& source = "<stream>");
MultivariateSeries load_csv(const std::filesystem::path& path);
/// Shortest round-trip decimal form, so write_csv then load_csv is exact.
void write_csv(std::ostream& out, const MultivariateSeries& series);
void write_csv(const std::filesystem::path& path, const MultivariateSeries& series);

struct SplitRatios {
  double train = 0.7;
  double valid = 0.1;
  double test = 0.2;
};

struct SeriesSplit {
  MultivariateSeries train;
  MultivariateSeries valid;
  MultivariateSeries test;
  std::size_t valid_begin = 0;  // index of the first valid row in the source
  std::size_t test_begin = 0;
};

/// Chronological, contiguous, non-overlapping. Train and valid lengths are
/// floor(T * ratio); test takes the remainder. Every part must hold at least
/// min_len rows.
SeriesSplit split(const MultivariateSeries& series, const SplitRatios& ratios, std::size_t min_len);

/// Fixed-length calendar split used by the ETT benchmarks: 12 months train,
/// 4 months valid, 4 months test, with 30-day months and the given number of
/// rows per day (24 for hourly files, 96 for 15-minute files).
SeriesSplit split_calendar(const MultivariateSeries& series, std::size_t rows_per_day, std::size_t min_len);

/// Per-variable z-score with population statistics.
class Normalizer {
 public:
  Normalizer() = default;
  static Normalizer fit(const MultivariateSeries& series);

  MultivariateSeries transform(const MultivariateSeries& series) const;
  MultivariateSeries inverse(const MultivariateSeries& series) const;
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return std_; }

  nlohmann::json to_json() const;
  static Normalizer from_json(const nlohmann::json& j);

 private:
  Normalizer(std::vector<double> mean, std::vector<double> stddev);
  MultivariateSeries apply(const MultivariateSeries& series, bool forward) const;

  std::vector<double> mean_;
  std::vector<double> std_;
};

struct WindowSpec {
  std::size_t input_len = 96;  // L
  std::size_t horizon = 96;    // H
  std::size_t stride = 1;
};

/// X is K x L, Y is K x H and starts right after X. Stamp matrices are L x 4
/// and H x 4, left undefined when the series has no timestamps.
struct SeriesWindow {
  Tensor x;
  Tensor y;
  Tensor x_stamps;
  Tensor y_stamps;
  std::size_t origin = 0;  // row of x's first column in the source series
};

std::size_t window_count(std::size_t length, const WindowSpec& spec);
std::vector<SeriesWindow> make_windows(const MultivariateSeries& series, const WindowSpec& spec);

struct SynthOptions {
  std::size_t num_vars = 7;
  std::size_t length = 2000;
  double period = 24.0;
  double noise_sd = 0.0;
  std::uint64_t seed = 0;
  // Per-variable overrides; when empty they are drawn from the seed.
  std::vector<double> amplitude;
  std::vector<double> phase;
  std::vector<double> weekly;
};

/// x_k(t) = a_k sin(2 pi t / period + phi_k) + b_k sin(2 pi t / (7 period)) + noise.
/// Timestamps are hourly from 2016-07-01 00:00:00; names are var0..var{K-1}.
MultivariateSeries synth_periodic(const SynthOptions& opts);

}  // namespace mtsf
