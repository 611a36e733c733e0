#include "mtsf/model/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "mtsf/ops.hpp"

namespace mtsf {

Tensor ParameterFactory::add(const std::string& name, Tensor t) {
  t.set_requires_grad(true);
  params_.push_back({name, t});
  return t;
}

Tensor ParameterFactory::uniform(const std::string& name, Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) v = dist(rng_);
  return add(name, t);
}

Tensor ParameterFactory::constant(const std::string& name, Shape shape, double value) {
  return add(name, Tensor(std::move(shape), value));
}

Tensor ParameterFactory::near_identity(const std::string& name, std::size_t n) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(n));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) t(i, j) = (i == j ? 1.0 : 0.0) + dist(rng_);
  return add(name, t);
}

Linear::Linear(ParameterFactory& factory, const std::string& name, std::size_t in, std::size_t out, bool with_bias)
    : weight_(factory.uniform(name + ".weight", {in, out}, in)) {
  if (with_bias) bias_ = factory.uniform(name + ".bias", {out}, in);
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, weight_);
  return bias_.defined() ? add_row_vector(y, bias_) : y;
}

LayerNorm::LayerNorm(ParameterFactory& factory, const std::string& name, std::size_t width)
    : gain_(factory.constant(name + ".gain", {width}, 1.0)), bias_(factory.constant(name + ".bias", {width}, 0.0)) {}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain_, bias_); }

FeedForward::FeedForward(ParameterFactory& factory, const std::string& name, std::size_t d_model, std::size_t d_ff)
    : in_(factory, name + ".in", d_model, d_ff, true), out_(factory, name + ".out", d_ff, d_model, true) {}

Tensor FeedForward::forward(const Tensor& x) const { return out_.forward(gelu(in_.forward(x))); }

MultiHeadAttention::MultiHeadAttention(ParameterFactory& factory, const std::string& name, std::size_t d_model,
                                       std::size_t n_heads)
    : w_q_(factory.uniform(name + ".w_q", {d_model, d_model}, d_model)),
      w_k_(factory.uniform(name + ".w_k", {d_model, d_model}, d_model)),
      w_v_(factory.uniform(name + ".w_v", {d_model, d_model}, d_model)),
      w_o_(factory.uniform(name + ".w_o", {d_model, d_model}, d_model)),
      n_heads_(n_heads),
      head_dim_(d_model / n_heads) {
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw std::invalid_argument("d_model " + std::to_string(d_model) + " not divisible by " + std::to_string(n_heads) +
                                " heads");
  }
}

Tensor MultiHeadAttention::forward(const Tensor& queries, const Tensor& keys_values, AttentionTrace* trace,
                                   const std::string& block, std::size_t layer) const {
  const Tensor q = matmul(queries, w_q_);
  const Tensor k = matmul(keys_values, w_k_);
  const Tensor v = matmul(keys_values, w_v_);
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(head_dim_));
  std::vector<Tensor> heads;
  heads.reserve(n_heads_);
  for (std::size_t h = 0; h < n_heads_; ++h) {
    const std::size_t begin = h * head_dim_;
    Tensor q_h = n_heads_ == 1 ? q : slice_cols(q, begin, head_dim_);
    Tensor k_h = n_heads_ == 1 ? k : slice_cols(k, begin, head_dim_);
    Tensor v_h = n_heads_ == 1 ? v : slice_cols(v, begin, head_dim_);
    Tensor scores = softmax_rows(scale(matmul(q_h, transpose(k_h)), inv_scale));
    if (trace) trace->push_back({block, layer, h, scores.clone()});
    heads.push_back(matmul(scores, v_h));
  }
  Tensor merged = n_heads_ == 1 ? heads.front() : concat_cols(heads);
  return matmul(merged, w_o_);
}

EncoderLayer::EncoderLayer(ParameterFactory& factory, const std::string& name, MixingKind mixing, std::size_t n_tokens,
                           std::size_t d_model, std::size_t n_heads, std::size_t d_ff, bool post_norm)
    : mixing_(mixing), post_norm_(post_norm) {
  switch (mixing) {
    case MixingKind::kSelfAttention:
      attention_ = MultiHeadAttention(factory, name + ".attn", d_model, n_heads);
      norm_mix_ = LayerNorm(factory, name + ".norm_attn", d_model);
      break;
    case MixingKind::kTokenMixing:
      token_mixer_ = factory.near_identity(name + ".token_mix", n_tokens);
      break;
    case MixingKind::kNone:
      break;
  }
  norm_ffn_ = LayerNorm(factory, name + ".norm_ffn", d_model);
  ffn_ = FeedForward(factory, name + ".ffn", d_model, d_ff);
}

Tensor EncoderLayer::forward(const Tensor& x, AttentionTrace* trace, std::size_t layer) const {
  Tensor h = x;
  switch (mixing_) {
    case MixingKind::kSelfAttention:
      if (post_norm_) {
        h = norm_mix_.forward(add(h, attention_.forward(h, h, trace, "encoder.self", layer)));
      } else {
        const Tensor normed = norm_mix_.forward(h);
        h = add(h, attention_.forward(normed, normed, trace, "encoder.self", layer));
      }
      break;
    case MixingKind::kTokenMixing:
      h = matmul(token_mixer_, h);
      break;
    case MixingKind::kNone:
      break;
  }
  if (post_norm_) return norm_ffn_.forward(add(h, ffn_.forward(h)));
  return add(h, ffn_.forward(norm_ffn_.forward(h)));
}

DecoderLayer::DecoderLayer(ParameterFactory& factory, const std::string& name, std::size_t d_model,
                           std::size_t n_heads, std::size_t d_ff, bool post_norm)
    : post_norm_(post_norm),
      self_attention_(factory, name + ".self_attn", d_model, n_heads),
      cross_attention_(factory, name + ".cross_attn", d_model, n_heads),
      norm_self_(factory, name + ".norm_self", d_model),
      norm_cross_(factory, name + ".norm_cross", d_model),
      norm_ffn_(factory, name + ".norm_ffn", d_model),
      ffn_(factory, name + ".ffn", d_model, d_ff) {}

Tensor DecoderLayer::forward(const Tensor& x, const Tensor& memory, AttentionTrace* trace, std::size_t layer) const {
  Tensor h = x;
  if (post_norm_) {
    h = norm_self_.forward(add(h, self_attention_.forward(h, h, trace, "decoder.self", layer)));
    h = norm_cross_.forward(add(h, cross_attention_.forward(h, memory, trace, "decoder.cross", layer)));
    return norm_ffn_.forward(add(h, ffn_.forward(h)));
  }
  const Tensor normed = norm_self_.forward(h);
  h = add(h, self_attention_.forward(normed, normed, trace, "decoder.self", layer));
  h = add(h, cross_attention_.forward(norm_cross_.forward(h), memory, trace, "decoder.cross", layer));
  return add(h, ffn_.forward(norm_ffn_.forward(h)));
}

Encoder::Encoder(ParameterFactory& factory, const std::string& name, std::size_t n_layers, MixingKind mixing,
                 std::size_t n_tokens, std::size_t d_model, std::size_t n_heads, std::size_t d_ff, bool post_norm) {
  layers_.reserve(n_layers);
  for (std::size_t i = 0; i < n_layers; ++i) {
    layers_.emplace_back(factory, name + "." + std::to_string(i), mixing, n_tokens, d_model, n_heads, d_ff, post_norm);
  }
}

Tensor Encoder::forward(const Tensor& tokens, AttentionTrace* trace) const {
  Tensor h = tokens;
  for (std::size_t i = 0; i < layers_.size(); ++i) h = layers_[i].forward(h, trace, i);
  return h;
}

Decoder::Decoder(ParameterFactory& factory, const std::string& name, std::size_t n_layers, std::size_t d_model,
                 std::size_t n_heads, std::size_t d_ff, bool post_norm) {
  layers_.reserve(n_layers);
  for (std::size_t i = 0; i < n_layers; ++i) {
    layers_.emplace_back(factory, name + "." + std::to_string(i), d_model, n_heads, d_ff, post_norm);
  }
}

Tensor Decoder::forward(const Tensor& tokens, const Tensor& memory, AttentionTrace* trace) const {
  Tensor h = tokens;
  for (std::size_t i = 0; i < layers_.size(); ++i) h = layers_[i].forward(h, memory, trace, i);
  return h;
}

}  // namespace mtsf
