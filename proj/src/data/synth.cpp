#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "mtsf/data.hpp"

namespace mtsf {

namespace {

const Timestamp kSynthStart{2016, 7, 1, 0, 0, 0};

std::vector<double> coefficients(const std::vector<double>& given, std::size_t k, const char* what,
                                 std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> drawn(k);
  for (double& v : drawn) v = dist(rng);  // always drawn so overrides do not shift the stream
  if (given.empty()) return drawn;
  if (given.size() != k) throw std::invalid_argument(std::string(what) + " override needs one value per variable");
  return given;
}

}  // namespace

MultivariateSeries synth_periodic(const SynthOptions& opts) {
  if (opts.num_vars == 0 || opts.length == 0) throw std::invalid_argument("synth needs K >= 1 and T >= 1");
  if (!(opts.period > 0.0)) throw std::invalid_argument("synth period must be positive");
  if (opts.noise_sd < 0.0) throw std::invalid_argument("synth noise_sd must be nonnegative");
  const std::size_t k = opts.num_vars;
  std::mt19937_64 rng(opts.seed);
  const auto amp = coefficients(opts.amplitude, k, "amplitude", rng, 0.5, 1.5);
  const auto phase = coefficients(opts.phase, k, "phase", rng, 0.0, 2.0 * std::numbers::pi);
  const auto weekly = coefficients(opts.weekly, k, "weekly", rng, 0.0, 0.5);
  std::normal_distribution<double> noise(0.0, 1.0);

  MultivariateSeries series;
  series.values = Tensor({opts.length, k});
  const double w_day = 2.0 * std::numbers::pi / opts.period;
  const double w_week = w_day / 7.0;
  for (std::size_t t = 0; t < opts.length; ++t) {
    const double td = static_cast<double>(t);
    for (std::size_t c = 0; c < k; ++c) {
      double v = amp[c] * std::sin(w_day * td + phase[c]) + weekly[c] * std::sin(w_week * td);
      if (opts.noise_sd > 0.0) v += opts.noise_sd * noise(rng);
      series.values(t, c) = v;
    }
    series.timestamps.push_back(add_seconds(kSynthStart, static_cast<std::int64_t>(t) * 3600));
  }
  for (std::size_t c = 0; c < k; ++c) series.names.push_back("var" + std::to_string(c));
  return series;
}

}  // namespace mtsf
