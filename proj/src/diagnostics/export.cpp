#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mtsf/diagnostics.hpp"

namespace mtsf {

AttentionTrace attention_dump(const ForecastModel& model, const SeriesWindow& window) {
  if (!model.has_transformer_decoder()) {
    throw std::invalid_argument("attention dump needs a Transformer-decoder model, got " +
                                std::string(to_string(model.config().variant())));
  }
  AttentionTrace trace;
  model.forecast(window.x, stamps_of(window), &trace);
  return trace;
}

void write_matrix_csv(const std::filesystem::path& path, const Tensor& m) {
  if (m.rank() != 2) throw DimensionError("matrix CSV needs a rank-2 tensor, got " + shape_to_string(m.shape()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[64];
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      const auto res = std::to_chars(buf, buf + sizeof buf, m(r, c));
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Tensor read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t count = 0;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc()) throw std::runtime_error(path.string() + ": bad number '" + cell + "'");
      values.push_back(v);
      ++count;
    }
    if (rows == 0) cols = count;
    if (count != cols) throw std::runtime_error(path.string() + ": ragged matrix");
    ++rows;
  }
  if (rows == 0) throw std::runtime_error(path.string() + ": empty matrix");
  return Tensor({rows, cols}, std::move(values));
}

void write_pgm(const std::filesystem::path& path, const Tensor& m) {
  if (m.rank() != 2) throw DimensionError("PGM needs a rank-2 tensor, got " + shape_to_string(m.shape()));
  const auto d = m.data();
  const auto [lo_it, hi_it] = std::minmax_element(d.begin(), d.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << m.cols() << ' ' << m.rows() << "\n255\n";
  for (double v : d) {
    const double level = range > 0.0 ? std::round(255.0 * (v - lo) / range) : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(level)));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace mtsf
