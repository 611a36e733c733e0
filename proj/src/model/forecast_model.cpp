#include "mtsf/model/forecast_model.hpp"

#include <stdexcept>

#include "mtsf/ops.hpp"

namespace mtsf {

namespace {

MixingKind mixing_for(DecoderKind kind) {
  switch (kind) {
    case DecoderKind::kNone: return MixingKind::kNone;
    case DecoderKind::kMixer: return MixingKind::kTokenMixing;
    default: return MixingKind::kSelfAttention;
  }
}

}  // namespace

ForecastModel::ForecastModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  ParameterFactory factory(cfg_.seed);
  const std::size_t dec_len = cfg_.start_len + cfg_.horizon;
  const bool tpt = cfg_.tokenization == Tokenization::kTimePoint;
  const std::size_t n_tokens = tpt ? cfg_.input_len : cfg_.num_vars;

  if (tpt) {
    tpt_encoder_embed_ = TimePointEmbedding(factory, "enc_embed", cfg_.num_vars, cfg_.d_model, cfg_.input_len,
                                            std::max(cfg_.input_len, dec_len), cfg_.embeddings);
  } else {
    tvt_encoder_embed_ = TimeVariableEmbedding(factory, "enc_embed", cfg_.num_vars, cfg_.input_len, cfg_.d_model,
                                               cfg_.input_len, cfg_.embeddings);
  }
  encoder_ = Encoder(factory, "encoder", cfg_.n_enc, mixing_for(cfg_.decoder), n_tokens, cfg_.d_model, cfg_.n_heads,
                     cfg_.d_ff, cfg_.post_norm);

  if (cfg_.decoder == DecoderKind::kTransformer) {
    if (tpt) {
      tpt_decoder_embed_ = TimePointEmbedding(factory, "dec_embed", cfg_.num_vars, cfg_.d_model, cfg_.input_len,
                                              std::max(cfg_.input_len, dec_len), cfg_.embeddings);
    } else {
      tvt_decoder_embed_ = TimeVariableEmbedding(factory, "dec_embed", cfg_.num_vars, dec_len, cfg_.d_model,
                                                 cfg_.input_len, cfg_.embeddings);
    }
    decoder_ = Decoder(factory, "decoder", cfg_.decoder_layers(), cfg_.d_model, cfg_.n_heads, cfg_.d_ff,
                       cfg_.post_norm);
  }

  if (tpt) {
    channel_projection_ = Linear(factory, "proj", cfg_.d_model, cfg_.num_vars, true);
  } else {
    horizon_projection_ = factory.uniform("proj.weight", {cfg_.d_model, cfg_.horizon}, cfg_.d_model);
  }
  params_ = std::move(factory.parameters());
}

Tensor ForecastModel::decoder_stamps(const StampFeatures& stamps) const {
  if (!cfg_.embeddings.stamp) return {};
  if (!stamps.observed.defined() || !stamps.future.defined()) {
    throw std::invalid_argument("stamp embedding enabled but stamp features are missing");
  }
  if (cfg_.start_len == 0) return stamps.future;
  const std::vector<Tensor> parts{
      slice_rows(stamps.observed, stamps.observed.rows() - cfg_.start_len, cfg_.start_len), stamps.future};
  return concat_rows(parts);
}

Tensor ForecastModel::embed_encoder_input(const Tensor& x, const StampFeatures& stamps) const {
  if (cfg_.tokenization == Tokenization::kTimePoint) return tpt_encoder_embed_.forward(x, stamps.observed);
  return tvt_encoder_embed_.forward(x, stamps.observed);
}

Tensor ForecastModel::embed_decoder_input(const Tensor& x, const StampFeatures& stamps) const {
  if (!has_transformer_decoder()) throw std::logic_error("model has no Transformer decoder");
  const Tensor raw = build_decoder_input(x, cfg_);
  const Tensor dec_stamps = decoder_stamps(stamps);
  if (cfg_.tokenization == Tokenization::kTimePoint) return tpt_decoder_embed_.forward(raw, dec_stamps);
  return tvt_decoder_embed_.forward(raw, dec_stamps);
}

Tensor ForecastModel::encoder_forward(const Tensor& tokens, AttentionTrace* trace) const {
  return encoder_.forward(tokens, trace);
}

Tensor ForecastModel::decoder_forward(const Tensor& dec_tokens, const Tensor& enc_out, AttentionTrace* trace) const {
  if (!has_transformer_decoder()) throw std::logic_error("model has no Transformer decoder");
  return decoder_.forward(dec_tokens, enc_out, trace);
}

Tensor ForecastModel::forecast(const Tensor& x, const StampFeatures& stamps, AttentionTrace* trace) const {
  if (x.rank() != 2 || x.rows() != cfg_.num_vars || x.cols() != cfg_.input_len) {
    throw DimensionError("forecast expects input " + shape_to_string({cfg_.num_vars, cfg_.input_len}) + ", got " +
                         shape_to_string(x.shape()));
  }
  const Tensor enc_out = encoder_forward(embed_encoder_input(x, stamps), trace);

  if (cfg_.tokenization == Tokenization::kTimePoint) {
    const Tensor dec_out = decoder_forward(embed_decoder_input(x, stamps), enc_out, trace);
    const Tensor tail = slice_rows(dec_out, dec_out.rows() - cfg_.horizon, cfg_.horizon);
    return transpose(channel_projection_.forward(tail));
  }
  if (has_transformer_decoder()) {
    return matmul(decoder_forward(embed_decoder_input(x, stamps), enc_out, trace), horizon_projection_);
  }
  return matmul(enc_out, horizon_projection_);
}

std::vector<Tensor> ForecastModel::parameter_tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

std::size_t ForecastModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.tensor.numel();
  return total;
}

}  // namespace mtsf
