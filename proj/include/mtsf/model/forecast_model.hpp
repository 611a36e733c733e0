#pragma once

#include <cstddef>
#include <vector>

#include "mtsf/model/config.hpp"
#include "mtsf/model/embedding.hpp"
#include "mtsf/model/layers.hpp"
#include "mtsf/tensor.hpp"

namespace mtsf {

/// Calendar features for one window. observed is L x 4 and future is H x 4.
/// Both may be left undefined for models built without stamp embeddings.
struct StampFeatures {
  Tensor observed;
  Tensor future;
};

/// One of the five architectures, built from a validated ModelConfig.
///
/// forecast() maps a K x L window to a K x H prediction in a single pass.
/// The model is read-only during forecast; gradients flow into its
/// parameters when a Tape is active.
class ForecastModel {
 public:
  explicit ForecastModel(const ModelConfig& cfg);
  ForecastModel(ForecastModel&&) = default;
  ForecastModel& operator=(ForecastModel&&) = default;
  ForecastModel(const ForecastModel&) = delete;
  ForecastModel& operator=(const ForecastModel&) = delete;

  const ModelConfig& config() const { return cfg_; }

  Tensor forecast(const Tensor& x, const StampFeatures& stamps = {}, AttentionTrace* trace = nullptr) const;

  /// Embedded encoder tokens (L x D for TPT, K x D for TVT).
  Tensor embed_encoder_input(const Tensor& x, const StampFeatures& stamps) const;
  /// Embedded decoder tokens; only for Transformer-decoder variants.
  Tensor embed_decoder_input(const Tensor& x, const StampFeatures& stamps) const;
  Tensor encoder_forward(const Tensor& tokens, AttentionTrace* trace = nullptr) const;
  Tensor decoder_forward(const Tensor& dec_tokens, const Tensor& enc_out, AttentionTrace* trace = nullptr) const;

  bool has_transformer_decoder() const { return cfg_.decoder == DecoderKind::kTransformer; }

  std::vector<NamedParameter>& parameters() { return params_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::vector<Tensor> parameter_tensors() const;
  std::size_t parameter_count() const;

  const Encoder& encoder() const { return encoder_; }
  const TimePointEmbedding& time_point_embedding() const { return tpt_encoder_embed_; }
  const TimeVariableEmbedding& time_variable_embedding() const { return tvt_encoder_embed_; }
  /// The final D -> H map (E_fc or E_post) for TVT variants.
  const Tensor& horizon_projection() const { return horizon_projection_; }

 private:
  Tensor decoder_stamps(const StampFeatures& stamps) const;

  ModelConfig cfg_;
  std::vector<NamedParameter> params_;

  TimePointEmbedding tpt_encoder_embed_;
  TimePointEmbedding tpt_decoder_embed_;
  TimeVariableEmbedding tvt_encoder_embed_;
  TimeVariableEmbedding tvt_decoder_embed_;
  Encoder encoder_;
  Decoder decoder_;
  Linear channel_projection_;  // TPT: D -> K
  Tensor horizon_projection_;  // TVT: D -> H
};

}  // namespace mtsf
