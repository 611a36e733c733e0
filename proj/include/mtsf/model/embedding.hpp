#pragma once

#include <cstddef>
#include <string>

#include "mtsf/model/config.hpp"
#include "mtsf/model/layers.hpp"
#include "mtsf/tensor.hpp"

namespace mtsf {

/// Number of calendar features per time step (month, day, weekday, hour).
inline constexpr std::size_t kStampWidth = 4;

/// Sinusoidal table with base 2L: PE[i, 2j] = sin(i / (2L)^(2j/D)),
/// PE[i, 2j+1] = cos(i / (2L)^(2j/D)).
Tensor positional_table(std::size_t rows, std::size_t d_model, std::size_t input_len);

/// Rows of the result are tokens. Time points: L tokens of width K.
/// Time variables: K tokens of width L.
Tensor tokenize(const Tensor& x, Tokenization mode);
Tensor untokenize(const Tensor& tokens, Tokenization mode);

/// Last L_start columns of x followed by H placeholder columns, K x (L_start + H).
Tensor build_decoder_input(const Tensor& x, const ModelConfig& cfg);

/// Time-point embedding: Conv(x) + PE + SE(stamps), one token per time step.
class TimePointEmbedding {
 public:
  TimePointEmbedding() = default;
  TimePointEmbedding(ParameterFactory& factory, const std::string& name, std::size_t num_vars, std::size_t d_model,
                     std::size_t input_len, std::size_t max_len, EmbeddingFlags flags);

  /// x: K x n, stamps: n x 4 (required when the stamp flag is on). Returns n x D.
  Tensor forward(const Tensor& x, const Tensor& stamps) const;

  const Tensor& conv_weight() const { return conv_weight_; }
  const Tensor& conv_bias() const { return conv_bias_; }
  const Linear& stamp_projection() const { return stamp_; }
  const Tensor& positions() const { return positions_; }

 private:
  EmbeddingFlags flags_;
  Tensor conv_weight_;
  Tensor conv_bias_;
  Linear stamp_;
  Tensor positions_;
};

/// Time-variable embedding: each variable's history right-multiplied by a
/// learned n x D projection. With stamps on, the stamp features are first
/// projected to K channels and added to the raw series.
class TimeVariableEmbedding {
 public:
  TimeVariableEmbedding() = default;
  TimeVariableEmbedding(ParameterFactory& factory, const std::string& name, std::size_t num_vars,
                        std::size_t steps, std::size_t d_model, std::size_t input_len, EmbeddingFlags flags);

  /// x: K x n, stamps: n x 4 (required when the stamp flag is on). Returns K x D.
  Tensor forward(const Tensor& x, const Tensor& stamps) const;

  const Tensor& projection() const { return projection_; }

 private:
  EmbeddingFlags flags_;
  Tensor projection_;
  Linear stamp_;
  Tensor positions_;
};

}  // namespace mtsf
