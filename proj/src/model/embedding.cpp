#include "mtsf/model/embedding.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mtsf/ops.hpp"

namespace mtsf {

Tensor positional_table(std::size_t rows, std::size_t d_model, std::size_t input_len) {
  Tensor pe({rows, d_model});
  const double base = 2.0 * static_cast<double>(input_len);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t c = 0; c < d_model; ++c) {
      const std::size_t j = c / 2;
      const double angle = static_cast<double>(i) / std::pow(base, 2.0 * static_cast<double>(j) / d_model);
      pe(i, c) = c % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Tensor tokenize(const Tensor& x, Tokenization mode) {
  return mode == Tokenization::kTimePoint ? transpose(x) : x.clone();
}

Tensor untokenize(const Tensor& tokens, Tokenization mode) {
  return mode == Tokenization::kTimePoint ? transpose(tokens) : tokens.clone();
}

Tensor build_decoder_input(const Tensor& x, const ModelConfig& cfg) {
  if (x.rank() != 2 || x.rows() != cfg.num_vars || x.cols() != cfg.input_len) {
    throw DimensionError("decoder input expects " + shape_to_string({cfg.num_vars, cfg.input_len}) + ", got " +
                         shape_to_string(x.shape()));
  }
  if (cfg.start_len > cfg.input_len) throw std::invalid_argument("L_start exceeds L");
  const Tensor placeholders({cfg.num_vars, cfg.horizon}, cfg.pad_value);
  if (cfg.start_len == 0) return placeholders;
  const std::vector<Tensor> parts{slice_cols(x, cfg.input_len - cfg.start_len, cfg.start_len), placeholders};
  return concat_cols(parts);
}

namespace {

void check_stamps(const Tensor& stamps, std::size_t steps, bool required) {
  if (!required) return;
  if (!stamps.defined()) throw std::invalid_argument("stamp embedding enabled but no stamp features were given");
  if (stamps.rank() != 2 || stamps.rows() != steps || stamps.cols() != kStampWidth) {
    throw DimensionError("stamp features must be " + shape_to_string({steps, kStampWidth}) + ", got " +
                         shape_to_string(stamps.shape()));
  }
}

}  // namespace

TimePointEmbedding::TimePointEmbedding(ParameterFactory& factory, const std::string& name, std::size_t num_vars,
                                       std::size_t d_model, std::size_t input_len, std::size_t max_len,
                                       EmbeddingFlags flags)
    : flags_(flags),
      conv_weight_(factory.uniform(name + ".conv.weight", {d_model, num_vars, 3}, 3 * num_vars)),
      conv_bias_(factory.uniform(name + ".conv.bias", {d_model}, 3 * num_vars)) {
  if (flags.stamp) stamp_ = Linear(factory, name + ".stamp", kStampWidth, d_model, true);
  if (flags.positional) positions_ = positional_table(max_len, d_model, input_len);
}

Tensor TimePointEmbedding::forward(const Tensor& x, const Tensor& stamps) const {
  const std::size_t steps = x.cols();
  check_stamps(stamps, steps, flags_.stamp);
  Tensor tokens = transpose(conv1d_width3(x, conv_weight_, conv_bias_));
  if (flags_.positional) {
    if (steps > positions_.rows()) throw DimensionError("sequence longer than the positional table");
    tokens = add(tokens, slice_rows(positions_, 0, steps));
  }
  if (flags_.stamp) tokens = add(tokens, stamp_.forward(stamps));
  return tokens;
}

TimeVariableEmbedding::TimeVariableEmbedding(ParameterFactory& factory, const std::string& name,
                                             std::size_t num_vars, std::size_t steps, std::size_t d_model,
                                             std::size_t input_len, EmbeddingFlags flags)
    : flags_(flags), projection_(factory.uniform(name + ".projection", {steps, d_model}, steps)) {
  if (flags.stamp) stamp_ = Linear(factory, name + ".stamp", kStampWidth, num_vars, true);
  if (flags.positional) positions_ = positional_table(num_vars, d_model, input_len);
}

Tensor TimeVariableEmbedding::forward(const Tensor& x, const Tensor& stamps) const {
  check_stamps(stamps, x.cols(), flags_.stamp);
  Tensor series = x;
  if (flags_.stamp) series = add(series, transpose(stamp_.forward(stamps)));
  Tensor tokens = matmul(series, projection_);
  if (flags_.positional) tokens = add(tokens, positions_);
  return tokens;
}

}  // namespace mtsf
