#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtsf/model/checkpoint.hpp"
#include "mtsf/model/config.hpp"
#include "mtsf/model/embedding.hpp"
#include "mtsf/model/forecast_model.hpp"
#include "mtsf/model/layers.hpp"
#include "mtsf/ops.hpp"
#include "support/oracles.hpp"

namespace mtsf {
namespace {

using testing::check_gradient;
using testing::max_abs_diff;
using testing::naive_add;
using testing::naive_attention;
using testing::naive_gelu;
using testing::naive_layer_norm;
using testing::naive_linear;
using testing::naive_matmul;
using testing::random_tensor;

constexpr Variant kAllVariants[] = {Variant::kTptTransformer, Variant::kTvtTransformer, Variant::kTvtLinear,
                                    Variant::kMlp, Variant::kMixer};

Tensor find_param(const std::vector<NamedParameter>& params, const std::string& name) {
  for (const auto& p : params)
    if (p.name == name) return p.tensor;
  throw std::out_of_range("no parameter " + name);
}

Tensor find_param(const ForecastModel& m, const std::string& name) { return find_param(m.parameters(), name); }

// Small instance of a variant; D divisible by the head count.
ModelConfig small_config(Variant v, std::size_t k, std::size_t l, std::size_t h, std::size_t d, std::size_t heads,
                         std::size_t layers, std::uint64_t seed = 7) {
  ModelConfig cfg = default_config(v, k, l, h);
  cfg.d_model = d;
  cfg.n_heads = heads;
  cfg.d_ff = 2 * d;
  cfg.n_enc = layers;
  if (cfg.n_dec) cfg.n_dec = layers;
  cfg.start_len = l / 2;
  cfg.seed = seed;
  return cfg;
}

Tensor stamps_for(std::size_t rows, std::uint64_t seed) { return random_tensor({rows, kStampWidth}, seed, -0.5, 0.5); }

StampFeatures stamp_pair(const ModelConfig& cfg, std::uint64_t seed) {
  return {stamps_for(cfg.input_len, seed), stamps_for(cfg.horizon, seed + 1)};
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor out({x.rows(), x.cols()});
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(perm[i], j);
  return out;
}

double max_rel_diff(const Tensor& a, const Tensor& b) {
  double scale = 1e-12;
  for (double v : a.data()) scale = std::max(scale, std::abs(v));
  return max_abs_diff(a, b) / scale;
}

double train_steps(ForecastModel& model, const std::vector<Tensor>& xs, const std::vector<Tensor>& ys,
                   const std::vector<StampFeatures>& stamps, double lr, int steps) {
  auto params = model.parameter_tensors();
  double last = 0.0;
  for (int step = 0; step < steps; ++step) {
    last = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      Tape tape;
      const Tensor loss = mse_loss(model.forecast(xs[i], stamps[i]), ys[i]);
      last += loss.item() / static_cast<double>(xs.size());
      tape.backward(scale(loss, 1.0 / static_cast<double>(xs.size())));
    }
    sgd_step(params, lr);
  }
  return last;
}

double batch_loss(const ForecastModel& model, const std::vector<Tensor>& xs, const std::vector<Tensor>& ys,
                  const std::vector<StampFeatures>& stamps) {
  double total = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) total += mse_loss(model.forecast(xs[i], stamps[i]), ys[i]).item();
  return total / static_cast<double>(xs.size());
}

// ---------------------------------------------------------------- config

TEST(ModelConfig, ValidationRejectsBadShapes) {
  ModelConfig cfg = default_config(Variant::kTvtLinear, 3, 16, 8);
  EXPECT_NO_THROW(cfg.validate());

  auto bad = cfg;
  bad.num_vars = 1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.n_heads = 3;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.start_len = 17;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.horizon = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.n_dec = 1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(ModelConfig, JsonRoundTripAndVariantNames) {
  for (Variant v : kAllVariants) {
    const ModelConfig cfg = default_config(v, 5, 24, 12);
    EXPECT_EQ(cfg.variant(), v);
    EXPECT_EQ(parse_variant(to_string(v)), v);
    const ModelConfig back = model_config_from_json(to_json(cfg));
    EXPECT_EQ(to_json(back), to_json(cfg));
  }
  EXPECT_THROW(parse_variant("informer"), std::invalid_argument);
}

TEST(ModelConfig, DefaultsFollowDocumentedRecipe) {
  const ModelConfig tvt = default_config(Variant::kTvtLinear, 7, 96, 96);
  EXPECT_EQ(tvt.d_model, 96u);
  EXPECT_FALSE(tvt.embeddings.positional);
  EXPECT_FALSE(tvt.embeddings.stamp);
  EXPECT_FALSE(tvt.n_dec.has_value());
  const ModelConfig tpt = default_config(Variant::kTptTransformer, 7, 96, 96);
  EXPECT_EQ(tpt.start_len, 48u);
  EXPECT_EQ(tpt.n_enc, 2u);
  EXPECT_EQ(tpt.decoder_layers(), 1u);
  EXPECT_TRUE(tpt.embeddings.positional);
  EXPECT_EQ(default_config(Variant::kMlp, 3, 10, 4).n_heads, 1u);
}

// ---------------------------------------------------------------- tokenization

TEST(Tokenize, TimePointAndTimeVariable) {
  const Tensor x = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  const Tensor tpt = tokenize(x, Tokenization::kTimePoint);
  ASSERT_EQ(tpt.shape(), (Shape{3, 2}));
  EXPECT_EQ(tpt(0, 0), 1);
  EXPECT_EQ(tpt(0, 1), 4);
  EXPECT_EQ(tpt(2, 0), 3);
  EXPECT_EQ(tpt(2, 1), 6);
  const Tensor tvt = tokenize(x, Tokenization::kTimeVariable);
  ASSERT_EQ(tvt.shape(), (Shape{2, 3}));
  EXPECT_EQ(max_abs_diff(tvt, x), 0.0);
  for (auto mode : {Tokenization::kTimePoint, Tokenization::kTimeVariable}) {
    EXPECT_EQ(max_abs_diff(untokenize(tokenize(x, mode), mode), x), 0.0);
  }
}

// ---------------------------------------------------------------- embeddings

TEST(PositionalTable, MatchesClosedForm) {
  const std::size_t l = 12, d = 6;
  const Tensor pe = positional_table(20, d, l);
  for (std::size_t c = 0; c < d; ++c) EXPECT_EQ(pe(0, c), c % 2 == 0 ? 0.0 : 1.0);
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t j = 0; j < d / 2; ++j) {
      const double angle = i / std::pow(2.0 * l, 2.0 * j / d);
      EXPECT_NEAR(pe(i, 2 * j), std::sin(angle), 1e-15);
      EXPECT_NEAR(pe(i, 2 * j + 1), std::cos(angle), 1e-15);
    }
}

TEST(TimePointEmbedding, ZeroInputGivesPositionalRows) {
  ParameterFactory f(3);
  const TimePointEmbedding emb(f, "e", 2, 6, 10, 10, {.positional = true, .stamp = true});
  for (const auto& name : {"e.stamp.weight", "e.stamp.bias", "e.conv.bias"}) {
    for (double& v : find_param(f.parameters(), name).mutable_data()) v = 0.0;
  }
  const Tensor out = emb.forward(Tensor({2, 10}, 0.0), stamps_for(10, 1));
  EXPECT_EQ(max_abs_diff(out, positional_table(10, 6, 10)), 0.0);
}

TEST(TimePointEmbedding, EqualsSumOfIndependentParts) {
  const std::size_t k = 3, l = 7, d = 4;
  ParameterFactory f(9);
  const TimePointEmbedding emb(f, "e", k, d, l, l, {.positional = true, .stamp = true});
  const Tensor x = random_tensor({k, l}, 1);
  const Tensor st = stamps_for(l, 2);
  const Tensor w = emb.conv_weight();
  const Tensor b = emb.conv_bias();

  Tensor expect({l, d});
  for (std::size_t t = 0; t < l; ++t)
    for (std::size_t o = 0; o < d; ++o) {
      double conv = b[o];
      for (std::size_t c = 0; c < k; ++c)
        for (std::size_t tap = 0; tap < 3; ++tap) {
          const std::size_t src = (t + l + tap - 1) % l;
          conv += w.data()[(o * k + c) * 3 + tap] * x(c, src);
        }
      const double angle = t / std::pow(2.0 * l, 2.0 * (o / 2) / d);
      const double pe = o % 2 == 0 ? std::sin(angle) : std::cos(angle);
      expect(t, o) = conv + pe;
    }
  expect = naive_add(expect, naive_linear(st, emb.stamp_projection().weight(), emb.stamp_projection().bias()));
  EXPECT_LT(max_abs_diff(emb.forward(x, st), expect), 1e-12);
}

TEST(TimePointEmbedding, StampLengthMismatchIsAnError) {
  ParameterFactory f(1);
  const TimePointEmbedding emb(f, "e", 2, 4, 6, 6, {.positional = false, .stamp = true});
  EXPECT_THROW(emb.forward(Tensor({2, 6}), stamps_for(5, 1)), DimensionError);
  EXPECT_THROW(emb.forward(Tensor({2, 6}), Tensor()), std::invalid_argument);
}

TEST(TimeVariableEmbedding, IdentityZeroAndLoopOracle) {
  {
    ParameterFactory f(1);
    const TimeVariableEmbedding emb(f, "e", 3, 4, 4, 4, {});
    Tensor p = emb.projection();
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) p(i, j) = i == j ? 1.0 : 0.0;
    const Tensor x = random_tensor({3, 4}, 5);
    EXPECT_EQ(max_abs_diff(emb.forward(x, {}), tokenize(x, Tokenization::kTimeVariable)), 0.0);
    for (double& v : p.mutable_data()) v = 0.0;
    const Tensor zeroed = emb.forward(x, {});
    for (double v : zeroed.data()) EXPECT_EQ(v, 0.0);
  }
  ParameterFactory f(2);
  const TimeVariableEmbedding emb(f, "e", 3, 4, 5, 4, {});
  const Tensor x = random_tensor({3, 4}, 6);
  const Tensor out = emb.forward(x, {});
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t d = 0; d < 5; ++d) {
      double s = 0.0;
      for (std::size_t t = 0; t < 4; ++t) s += x(k, t) * emb.projection()(t, d);
      EXPECT_NEAR(out(k, d), s, 1e-14);
    }
}

// ---------------------------------------------------------------- decoder input

TEST(DecoderInput, StartTokensThenPlaceholders) {
  ModelConfig cfg = default_config(Variant::kTvtTransformer, 2, 6, 3);
  const Tensor x = random_tensor({2, 6}, 4);

  cfg.start_len = 0;
  Tensor in = build_decoder_input(x, cfg);
  ASSERT_EQ(in.shape(), (Shape{2, 3}));
  for (double v : in.data()) EXPECT_EQ(v, 0.0);

  cfg.start_len = 6;
  in = build_decoder_input(x, cfg);
  ASSERT_EQ(in.shape(), (Shape{2, 9}));
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t t = 0; t < 6; ++t) EXPECT_EQ(in(k, t), x(k, t));
    for (std::size_t t = 6; t < 9; ++t) EXPECT_EQ(in(k, t), 0.0);
  }

  cfg.start_len = 4;
  cfg.pad_value = -2.5;
  in = build_decoder_input(x, cfg);
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(in(k, t), x(k, 2 + t));
    for (std::size_t t = 4; t < 7; ++t) EXPECT_EQ(in(k, t), -2.5);
  }
}

// ---------------------------------------------------------------- encoder / decoder

TEST(Encoder, ZeroLayersIsIdentity) {
  ParameterFactory f(1);
  const Encoder enc(f, "enc", 0, MixingKind::kSelfAttention, 3, 4, 2, 8, false);
  const Tensor x = random_tensor({3, 4}, 1);
  EXPECT_EQ(max_abs_diff(enc.forward(x), x), 0.0);
  const Decoder dec(f, "dec", 0, 4, 2, 8, false);
  EXPECT_EQ(max_abs_diff(dec.forward(x, random_tensor({5, 4}, 2)), x), 0.0);
}

TEST(Attention, ScalarTwoTokenOracle) {
  ParameterFactory f(4);
  const MultiHeadAttention attn(f, "a", 1, 1);
  const double wq = attn.w_q()[0], wk = attn.w_k()[0], wv = attn.w_v()[0], wo = attn.w_o()[0];
  const double x0 = 0.7, x1 = -1.3;
  const Tensor out = attn.forward(Tensor::matrix({{x0}, {x1}}), Tensor::matrix({{x0}, {x1}}));
  const double xs[2] = {x0, x1};
  for (int i = 0; i < 2; ++i) {
    const double s0 = wq * xs[i] * wk * x0, s1 = wq * xs[i] * wk * x1;
    const double p0 = 1.0 / (1.0 + std::exp(s1 - s0));
    const double expect = (p0 * x0 + (1.0 - p0) * x1) * wv * wo;
    EXPECT_NEAR(out(i, 0), expect, 1e-12);
  }
}

TEST(Attention, MatchesLoopOracleMultiHead) {
  ParameterFactory f(5);
  const MultiHeadAttention attn(f, "a", 6, 3);
  const Tensor q = random_tensor({4, 6}, 1);
  const Tensor kv = random_tensor({5, 6}, 2);
  AttentionTrace trace;
  const Tensor out = attn.forward(q, kv, &trace, "t", 0);
  EXPECT_LT(max_abs_diff(out, naive_attention(q, kv, attn.w_q(), attn.w_k(), attn.w_v(), attn.w_o(), 3)), 1e-12);
  ASSERT_EQ(trace.size(), 3u);
  for (const auto& m : trace) {
    ASSERT_EQ(m.scores.shape(), (Shape{4, 5}));
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 5; ++j) s += m.scores(i, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Attention, SingletonMemoryReturnsValueProjection) {
  ParameterFactory f(6);
  const MultiHeadAttention attn(f, "a", 4, 2);
  const Tensor memory = random_tensor({1, 4}, 3);
  const Tensor out = attn.forward(random_tensor({5, 4}, 4), memory);
  const Tensor vo = naive_matmul(naive_matmul(memory, attn.w_v()), attn.w_o());
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out(i, j), vo(0, j), 1e-14);
}

Tensor naive_ffn(const std::vector<NamedParameter>& p, const std::string& name, const Tensor& x) {
  const Tensor h = naive_gelu(naive_linear(x, find_param(p, name + ".in.weight"), find_param(p, name + ".in.bias")));
  return naive_linear(h, find_param(p, name + ".out.weight"), find_param(p, name + ".out.bias"));
}

Tensor naive_ln(const std::vector<NamedParameter>& p, const std::string& name, const Tensor& x) {
  return naive_layer_norm(x, find_param(p, name + ".gain"), find_param(p, name + ".bias"));
}

Tensor naive_mha(const std::vector<NamedParameter>& p, const std::string& name, const Tensor& q, const Tensor& kv,
                 std::size_t heads) {
  return naive_attention(q, kv, find_param(p, name + ".w_q"), find_param(p, name + ".w_k"), find_param(p, name + ".w_v"),
                         find_param(p, name + ".w_o"), heads);
}

// Parameters of fresh layers start with unit gains and zero biases; perturb
// them so the oracle sees every term.
void perturb(std::vector<NamedParameter>& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.3, 0.3);
  for (auto& p : params)
    for (double& v : p.tensor.mutable_data()) v += dist(rng);
}

TEST(EncoderLayer, PreNormMatchesLoopOracle) {
  for (bool post : {false, true}) {
    ParameterFactory f(8);
    const EncoderLayer layer(f, "l", MixingKind::kSelfAttention, 3, 4, 2, 8, post);
    perturb(f.parameters(), 1);
    const auto& p = f.parameters();
    const Tensor x = random_tensor({3, 4}, 2);
    Tensor expect;
    if (!post) {
      const Tensor n1 = naive_ln(p, "l.norm_attn", x);
      const Tensor h = naive_add(x, naive_mha(p, "l.attn", n1, n1, 2));
      expect = naive_add(h, naive_ffn(p, "l.ffn", naive_ln(p, "l.norm_ffn", h)));
    } else {
      const Tensor h = naive_ln(p, "l.norm_attn", naive_add(x, naive_mha(p, "l.attn", x, x, 2)));
      expect = naive_ln(p, "l.norm_ffn", naive_add(h, naive_ffn(p, "l.ffn", h)));
    }
    EXPECT_LT(max_abs_diff(layer.forward(x), expect), 1e-12) << "post_norm=" << post;
  }
}

TEST(EncoderLayer, MixingAndFeedForwardOnlyOracles) {
  ParameterFactory f(9);
  const EncoderLayer mixer(f, "m", MixingKind::kTokenMixing, 3, 4, 1, 8, false);
  const EncoderLayer mlp(f, "f", MixingKind::kNone, 3, 4, 1, 8, false);
  perturb(f.parameters(), 2);
  const auto& p = f.parameters();
  const Tensor x = random_tensor({3, 4}, 3);
  const Tensor mixed = naive_matmul(find_param(p, "m.token_mix"), x);
  EXPECT_LT(max_abs_diff(mixer.forward(x), naive_add(mixed, naive_ffn(p, "m.ffn", naive_ln(p, "m.norm_ffn", mixed)))),
            1e-12);
  EXPECT_LT(max_abs_diff(mlp.forward(x), naive_add(x, naive_ffn(p, "f.ffn", naive_ln(p, "f.norm_ffn", x)))), 1e-12);
}

TEST(DecoderLayer, TwoByTwoLoopOracle) {
  ParameterFactory f(10);
  const DecoderLayer layer(f, "d", 2, 1, 4, false);
  perturb(f.parameters(), 3);
  const auto& p = f.parameters();
  const Tensor x = random_tensor({2, 2}, 4);
  const Tensor mem = random_tensor({2, 2}, 5);
  const Tensor n1 = naive_ln(p, "d.norm_self", x);
  const Tensor h1 = naive_add(x, naive_mha(p, "d.self_attn", n1, n1, 1));
  const Tensor h2 = naive_add(h1, naive_mha(p, "d.cross_attn", naive_ln(p, "d.norm_cross", h1), mem, 1));
  const Tensor expect = naive_add(h2, naive_ffn(p, "d.ffn", naive_ln(p, "d.norm_ffn", h2)));
  EXPECT_LT(max_abs_diff(layer.forward(x, mem), expect), 1e-12);
}

TEST(Encoder, TokenPermutationEquivariant) {
  ParameterFactory f(11);
  const Encoder enc(f, "enc", 2, MixingKind::kSelfAttention, 5, 6, 2, 12, false);
  const Tensor x = random_tensor({5, 6}, 6);
  const std::vector<std::size_t> perm{2, 4, 0, 3, 1};
  EXPECT_LT(max_abs_diff(enc.forward(permute_rows(x, perm)), permute_rows(enc.forward(x), perm)), 1e-12);
}

// ---------------------------------------------------------------- forecast

TEST(Forecast, AllVariantsReturnKByH) {
  for (Variant v : kAllVariants) {
    ModelConfig cfg = default_config(v, 7, 96, 96);
    const ForecastModel model(cfg);
    const Tensor x = random_tensor({7, 96}, 1, -10, 10);
    const Tensor y = model.forecast(x, stamp_pair(cfg, 2));
    ASSERT_EQ(y.shape(), (Shape{7, 96})) << to_string(v);
    for (double e : y.data()) ASSERT_TRUE(std::isfinite(e)) << to_string(v);
  }
}

TEST(Forecast, RejectsWrongInputShape) {
  const ForecastModel model(small_config(Variant::kTvtLinear, 3, 8, 4, 8, 1, 1));
  EXPECT_THROW(model.forecast(Tensor({3, 9})), DimensionError);
  EXPECT_THROW(model.forecast(Tensor({2, 8})), DimensionError);
}

TEST(Forecast, RandomConfigsKeepShapeContract) {
  std::mt19937_64 rng(2024);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  for (int trial = 0; trial < 25; ++trial) {
    const Variant v = kAllVariants[trial % 5];
    const std::size_t k = pick(2, 32), l = pick(1, 128), h = pick(1, 128);
    ModelConfig cfg = default_config(v, k, l, h);
    cfg.d_model = 4 * pick(1, 4);
    cfg.n_heads = pick(0, 1) ? 2 : 1;
    cfg.d_ff = 8;
    cfg.n_enc = pick(0, 2);
    if (cfg.n_dec) cfg.n_dec = pick(0, 1);
    cfg.start_len = pick(0, l);
    cfg.seed = trial;
    const ForecastModel model(cfg);
    const Tensor y = model.forecast(random_tensor({k, l}, trial), stamp_pair(cfg, trial));
    ASSERT_EQ(y.shape(), (Shape{k, h})) << to_string(v) << " K=" << k << " L=" << l << " H=" << h;
  }
}

TEST(Forecast, TvtLinearWithoutEncoderIsClosedFormMap) {
  ModelConfig cfg = small_config(Variant::kTvtLinear, 4, 10, 6, 8, 1, 0);
  const ForecastModel model(cfg);
  const Tensor x = random_tensor({4, 10}, 3);
  const Tensor map = naive_matmul(find_param(model, "enc_embed.projection"), model.horizon_projection());
  EXPECT_LT(max_abs_diff(model.forecast(x), naive_matmul(x, map)), 1e-12);

  cfg.decoder = DecoderKind::kNone;
  const ForecastModel mlp(cfg);
  EXPECT_EQ(max_abs_diff(mlp.forecast(x), model.forecast(x)), 0.0);
}

TEST(Forecast, MixerWithIdentityMixingEqualsMlp) {
  const ModelConfig mlp_cfg = small_config(Variant::kMlp, 3, 8, 4, 8, 1, 2);
  ModelConfig mix_cfg = mlp_cfg;
  mix_cfg.decoder = DecoderKind::kMixer;
  const ForecastModel mlp(mlp_cfg);
  ForecastModel mixer(mix_cfg);
  for (auto& p : mixer.parameters()) {
    if (p.name.find("token_mix") != std::string::npos) {
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) p.tensor(i, j) = i == j ? 1.0 : 0.0;
    } else {
      const Tensor src = find_param(mlp, p.name);
      std::copy(src.data().begin(), src.data().end(), p.tensor.mutable_data().begin());
    }
  }
  const Tensor x = random_tensor({3, 8}, 9);
  EXPECT_EQ(max_abs_diff(mixer.forecast(x), mlp.forecast(x)), 0.0);
}

TEST(Forecast, TvtVariablePermutationEquivariance) {
  for (Variant v : {Variant::kTvtLinear, Variant::kTvtTransformer, Variant::kMlp}) {
    ForecastModel model(small_config(v, 4, 12, 6, 8, 2, 1));
    const std::vector<std::size_t> perm{3, 1, 0, 2};
    const Tensor x = random_tensor({4, 12}, 5);
    EXPECT_LT(max_rel_diff(model.forecast(permute_rows(x, perm)), permute_rows(model.forecast(x), perm)), 1e-12)
        << to_string(v) << " at init";

    std::vector<Tensor> xs{random_tensor({4, 12}, 6), random_tensor({4, 12}, 7)};
    std::vector<Tensor> ys{random_tensor({4, 6}, 8), random_tensor({4, 6}, 9)};
    train_steps(model, xs, ys, {{}, {}}, 0.05, 10);
    EXPECT_LT(max_rel_diff(model.forecast(permute_rows(x, perm)), permute_rows(model.forecast(x), perm)), 1e-12)
        << to_string(v) << " after training";
  }
}

TEST(Forecast, AttentionRowsSumToOneEverywhere) {
  for (Variant v : {Variant::kTptTransformer, Variant::kTvtTransformer, Variant::kTvtLinear}) {
    const ModelConfig cfg = small_config(v, 3, 16, 8, 8, 2, 2);
    const ForecastModel model(cfg);
    AttentionTrace trace;
    model.forecast(random_tensor({3, 16}, 1), stamp_pair(cfg, 2), &trace);
    const std::size_t per_layer = v == Variant::kTvtLinear ? 1 : 3;
    EXPECT_EQ(trace.size(), 2 * 2 * per_layer) << to_string(v);
    for (const auto& m : trace)
      for (std::size_t i = 0; i < m.scores.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m.scores.cols(); ++j) s += m.scores(i, j);
        EXPECT_NEAR(s, 1.0, 1e-12) << m.block << " l" << m.layer << " h" << m.head;
      }
  }
}

TEST(Forecast, PostNormFlagChangesOutputOnly) {
  ModelConfig cfg = small_config(Variant::kTvtTransformer, 3, 8, 4, 8, 2, 1);
  const Tensor x = random_tensor({3, 8}, 1);
  const Tensor pre = ForecastModel(cfg).forecast(x);
  cfg.post_norm = true;
  const Tensor post = ForecastModel(cfg).forecast(x);
  ASSERT_EQ(post.shape(), pre.shape());
  EXPECT_GT(max_abs_diff(pre, post), 1e-6);
}

TEST(Forecast, SeededConstructionIsReproducible) {
  const ModelConfig cfg = small_config(Variant::kTptTransformer, 3, 8, 4, 8, 2, 1);
  const ForecastModel a(cfg), b(cfg);
  const Tensor x = random_tensor({3, 8}, 1);
  const StampFeatures st = stamp_pair(cfg, 2);
  const Tensor ya = a.forecast(x, st), yb = b.forecast(x, st);
  for (std::size_t i = 0; i < ya.numel(); ++i) EXPECT_EQ(ya[i], yb[i]);
}

TEST(Forecast, FiftyStepsHalveTinyBatchLoss) {
  for (Variant v : kAllVariants) {
    const ModelConfig cfg = small_config(v, 3, 16, 8, 16, 2, 1);
    ForecastModel model(cfg);
    std::vector<Tensor> xs, ys;
    std::vector<StampFeatures> st;
    for (int i = 0; i < 4; ++i) {
      xs.push_back(random_tensor({3, 16}, 10 + i));
      ys.push_back(random_tensor({3, 8}, 20 + i));
      st.push_back(stamp_pair(cfg, 30 + i));
    }
    const double before = batch_loss(model, xs, ys, st);
    train_steps(model, xs, ys, st, 0.5, 50);
    const double after = batch_loss(model, xs, ys, st);
    EXPECT_LE(after, 0.5 * before) << to_string(v) << " " << before << " -> " << after;
  }
}

TEST(Forecast, EndToEndGradientsMatchFiniteDifferences) {
  for (Variant v : kAllVariants) {
    ModelConfig cfg = small_config(v, 2, 8, 4, 8, 2, 1);
    const ForecastModel model(cfg);
    const Tensor x = random_tensor({2, 8}, 3);
    const Tensor y = random_tensor({2, 4}, 4);
    const StampFeatures st = stamp_pair(cfg, 5);
    auto loss = [&] { return mse_loss(model.forecast(x, st), y); };
    for (const auto& p : model.parameters()) {
      const auto r = check_gradient(p.tensor, loss);
      EXPECT_LT(r.max_rel_error, 1e-3) << to_string(v) << " " << p.name << "[" << r.worst_index
                                       << "] analytic=" << r.analytic << " numeric=" << r.numeric;
    }
  }
}

// ---------------------------------------------------------------- checkpoint

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = std::filesystem::temp_directory_path() / "mtsf_ckpt_test";
  std::filesystem::create_directories(dir);
  for (Variant v : kAllVariants) {
    const ModelConfig cfg = small_config(v, 3, 8, 4, 8, 2, 1, 42);
    ForecastModel model(cfg);
    perturb(model.parameters(), 9);
    const auto path = dir / (std::string(to_string(v)) + ".json");
    save_checkpoint(path, model, {{"note", "x"}});
    const Checkpoint back = load_checkpoint(path);
    EXPECT_EQ(back.extra["note"], "x");
    ASSERT_EQ(back.model.parameters().size(), model.parameters().size());
    const Tensor x = random_tensor({3, 8}, 1);
    const StampFeatures st = stamp_pair(cfg, 2);
    const Tensor a = model.forecast(x, st), b = back.model.forecast(x, st);
    for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], b[i]) << to_string(v);
  }
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, RejectsTamperedContents) {
  const ForecastModel model(small_config(Variant::kTvtLinear, 3, 8, 4, 8, 1, 1));
  nlohmann::json j = checkpoint_to_json(model);
  auto bad_shape = j;
  bad_shape["parameters"][0]["shape"] = {1, 1};
  EXPECT_THROW(checkpoint_from_json(bad_shape), std::exception);
  auto bad_format = j;
  bad_format["format"] = "other";
  EXPECT_THROW(checkpoint_from_json(bad_format), std::exception);
  auto missing = j;
  missing["parameters"].erase(missing["parameters"].size() - 1);
  EXPECT_THROW(checkpoint_from_json(missing), std::exception);
}

}  // namespace
}  // namespace mtsf
