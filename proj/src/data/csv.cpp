#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "mtsf/data.hpp"

namespace mtsf {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) s.remove_suffix(1);
  return s;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

MultivariateSeries MultivariateSeries::slice(std::size_t begin, std::size_t count) const {
  if (begin + count > length()) throw std::out_of_range("series slice past the end");
  MultivariateSeries out;
  const std::size_t k = num_vars();
  const auto src = values.data().subspan(begin * k, count * k);
  out.values = Tensor({count, k}, std::vector<double>(src.begin(), src.end()));
  if (!timestamps.empty()) {
    out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                          timestamps.begin() + static_cast<std::ptrdiff_t>(begin + count));
  }
  out.names = names;
  return out;
}

void MultivariateSeries::validate() const {
  if (!values.defined() || values.rank() != 2) throw std::invalid_argument("series values must be a T x K matrix");
  if (num_vars() < 2) throw std::invalid_argument("multivariate series needs at least 2 variables");
  if (names.size() != num_vars()) throw std::invalid_argument("variable name count does not match K");
  if (!timestamps.empty()) {
    if (timestamps.size() != length()) throw std::invalid_argument("timestamp count does not match T");
    for (std::size_t i = 1; i < timestamps.size(); ++i) {
      if (!(timestamps[i - 1] < timestamps[i])) {
        throw std::invalid_argument("timestamps not strictly increasing at row " + std::to_string(i));
      }
    }
  }
}

MultivariateSeries parse_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw CsvError(source + ": empty file", 0, 0);
  const auto header = split_fields(line);
  if (trim(header.front()) != "date") throw CsvError(source + ": first column must be named 'date'", 0, 1);
  const std::size_t k = header.size() - 1;
  if (k < 2) throw CsvError(source + ": need at least 2 variables, found " + std::to_string(k), 0, 0);

  MultivariateSeries series;
  for (std::size_t c = 1; c < header.size(); ++c) series.names.emplace_back(trim(header[c]));

  std::vector<double> values;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw CsvError(source + ": row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                         " fields, expected " + std::to_string(header.size()),
                     row, 0);
    }
    const auto ts = parse_timestamp(trim(fields[0]));
    if (!ts) {
      throw CsvError(source + ": row " + std::to_string(row) + ", column 1: unparseable timestamp '" +
                         std::string(fields[0]) + "'",
                     row, 1);
    }
    if (!series.timestamps.empty() && !(series.timestamps.back() < *ts)) {
      throw CsvError(source + ": row " + std::to_string(row) + ": timestamps must be strictly increasing", row, 1);
    }
    series.timestamps.push_back(*ts);
    for (std::size_t c = 1; c < fields.size(); ++c) {
      const std::string_view cell = trim(fields[c]);
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw CsvError(source + ": row " + std::to_string(row) + ", column " + std::to_string(c + 1) +
                           ": not a number '" + std::string(cell) + "'",
                       row, c + 1);
      }
      values.push_back(v);
    }
  }
  const std::size_t t = series.timestamps.size();
  if (t == 0) throw CsvError(source + ": no data rows", row, 0);
  series.values = Tensor({t, k}, std::move(values));
  return series;
}

MultivariateSeries load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_csv(in, path.string());
}

void write_csv(std::ostream& out, const MultivariateSeries& series) {
  series.validate();
  if (series.timestamps.size() != series.length()) throw std::invalid_argument("CSV output needs timestamps");
  out << "date";
  for (const auto& n : series.names) out << ',' << n;
  out << '\n';
  const std::size_t k = series.num_vars();
  for (std::size_t t = 0; t < series.length(); ++t) {
    out << format_timestamp(series.timestamps[t]);
    for (std::size_t c = 0; c < k; ++c) out << ',' << format_double(series.values(t, c));
    out << '\n';
  }
}

void write_csv(const std::filesystem::path& path, const MultivariateSeries& series) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_csv(out, series);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace mtsf
