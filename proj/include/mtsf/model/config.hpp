#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"

namespace mtsf {

enum class Tokenization { kTimePoint, kTimeVariable };

/// What sits between the encoder output and the forecast. kNone is the MLP
/// baseline (feed-forward blocks only) and kMixer replaces self-attention with a
/// learned token-mixing matrix; both end in the same linear head as kLinear.
enum class DecoderKind { kTransformer, kLinear, kNone, kMixer };

/// The five architectures the lab builds.
enum class Variant { kTptTransformer, kTvtTransformer, kTvtLinear, kMlp, kMixer };

struct EmbeddingFlags {
  bool positional = false;
  bool stamp = false;
};

struct ModelConfig {
  Tokenization tokenization = Tokenization::kTimeVariable;
  DecoderKind decoder = DecoderKind::kLinear;
  std::size_t num_vars = 7;     // K
  std::size_t input_len = 96;   // L
  std::size_t horizon = 96;     // H
  std::size_t d_model = 96;     // D
  std::size_t start_len = 48;   // decoder start tokens
  std::size_t n_enc = 2;
  std::optional<std::size_t> n_dec;  // only meaningful with a Transformer decoder
  std::size_t n_heads = 8;
  std::size_t d_ff = 384;
  EmbeddingFlags embeddings;
  double pad_value = 0.0;
  bool post_norm = false;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  Variant variant() const;
  std::size_t decoder_layers() const { return n_dec.value_or(0); }
};

/// Documented defaults for one architecture at a given problem size.
///
/// TVT variants use D = L and no embeddings beyond the learned projection.
/// The TPT model follows the Informer-family recipe scaled to desk size:
/// D = 128, 8 heads, positional and stamp embeddings on. All variants use
/// d_ff = 4 D, two encoder layers, one decoder layer where applicable and
/// L_start = L / 2. Head count falls back to 1 when D is not divisible by 8.
ModelConfig default_config(Variant variant, std::size_t num_vars, std::size_t input_len, std::size_t horizon);

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace mtsf
