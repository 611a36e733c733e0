#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mtsf/tensor.hpp"

namespace mtsf {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

/// Creates named, seeded parameters in construction order.
/// Weights default to uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
class ParameterFactory {
 public:
  explicit ParameterFactory(std::uint64_t seed) : rng_(seed) {}

  Tensor uniform(const std::string& name, Shape shape, std::size_t fan_in);
  Tensor constant(const std::string& name, Shape shape, double value);
  /// Identity plus a uniform(-1/sqrt(n), 1/sqrt(n)) perturbation.
  Tensor near_identity(const std::string& name, std::size_t n);

  std::vector<NamedParameter>& parameters() { return params_; }

 private:
  Tensor add(const std::string& name, Tensor t);

  std::mt19937_64 rng_;
  std::vector<NamedParameter> params_;
};

/// y = x W (+ b), W stored as in x out.
class Linear {
 public:
  Linear() = default;
  Linear(ParameterFactory& factory, const std::string& name, std::size_t in, std::size_t out, bool with_bias);

  Tensor forward(const Tensor& x) const;
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterFactory& factory, const std::string& name, std::size_t width);
  Tensor forward(const Tensor& x) const;

 private:
  Tensor gain_;
  Tensor bias_;
};

/// Two linear layers with a GELU in between.
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterFactory& factory, const std::string& name, std::size_t d_model, std::size_t d_ff);
  Tensor forward(const Tensor& x) const;

 private:
  Linear in_;
  Linear out_;
};

/// One recorded attention score matrix (rows are queries, softmax-normalized).
struct AttentionMap {
  std::string block;  // "encoder.self", "decoder.self" or "decoder.cross"
  std::size_t layer = 0;
  std::size_t head = 0;
  Tensor scores;
};
using AttentionTrace = std::vector<AttentionMap>;

/// Multi-head scaled dot-product attention without projection biases.
/// W_Q, W_K, W_V, W_O are D x D; head h uses columns [h*d_qk, (h+1)*d_qk) of
/// the first three and the matching rows of W_O.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterFactory& factory, const std::string& name, std::size_t d_model, std::size_t n_heads);

  /// queries: n_q x D, keys_values: n_kv x D. Returns n_q x D.
  Tensor forward(const Tensor& queries, const Tensor& keys_values, AttentionTrace* trace = nullptr,
                 const std::string& block = {}, std::size_t layer = 0) const;

  std::size_t n_heads() const { return n_heads_; }
  std::size_t head_dim() const { return head_dim_; }
  const Tensor& w_q() const { return w_q_; }
  const Tensor& w_k() const { return w_k_; }
  const Tensor& w_v() const { return w_v_; }
  const Tensor& w_o() const { return w_o_; }

 private:
  Tensor w_q_, w_k_, w_v_, w_o_;
  std::size_t n_heads_ = 1;
  std::size_t head_dim_ = 1;
};

enum class MixingKind {
  kSelfAttention,
  kTokenMixing,  // learned K x K matrix applied across tokens
  kNone,         // feed-forward only
};

class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(ParameterFactory& factory, const std::string& name, MixingKind mixing, std::size_t n_tokens,
               std::size_t d_model, std::size_t n_heads, std::size_t d_ff, bool post_norm);

  Tensor forward(const Tensor& x, AttentionTrace* trace = nullptr, std::size_t layer = 0) const;

  const MultiHeadAttention& attention() const { return attention_; }
  const Tensor& token_mixer() const { return token_mixer_; }

 private:
  MixingKind mixing_ = MixingKind::kSelfAttention;
  bool post_norm_ = false;
  MultiHeadAttention attention_;
  Tensor token_mixer_;
  LayerNorm norm_mix_;
  LayerNorm norm_ffn_;
  FeedForward ffn_;
};

class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(ParameterFactory& factory, const std::string& name, std::size_t d_model, std::size_t n_heads,
               std::size_t d_ff, bool post_norm);

  Tensor forward(const Tensor& x, const Tensor& memory, AttentionTrace* trace = nullptr, std::size_t layer = 0) const;

 private:
  bool post_norm_ = false;
  MultiHeadAttention self_attention_;
  MultiHeadAttention cross_attention_;
  LayerNorm norm_self_;
  LayerNorm norm_cross_;
  LayerNorm norm_ffn_;
  FeedForward ffn_;
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(ParameterFactory& factory, const std::string& name, std::size_t n_layers, MixingKind mixing,
          std::size_t n_tokens, std::size_t d_model, std::size_t n_heads, std::size_t d_ff, bool post_norm);

  /// Applies every layer in order; zero layers is the identity.
  Tensor forward(const Tensor& tokens, AttentionTrace* trace = nullptr) const;
  const std::vector<EncoderLayer>& layers() const { return layers_; }

 private:
  std::vector<EncoderLayer> layers_;
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(ParameterFactory& factory, const std::string& name, std::size_t n_layers, std::size_t d_model,
          std::size_t n_heads, std::size_t d_ff, bool post_norm);

  /// Single non-autoregressive pass over all decoder tokens.
  Tensor forward(const Tensor& tokens, const Tensor& memory, AttentionTrace* trace = nullptr) const;
  std::size_t size() const { return layers_.size(); }

 private:
  std::vector<DecoderLayer> layers_;
};

}  // namespace mtsf
