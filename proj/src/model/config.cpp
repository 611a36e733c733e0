#include "mtsf/model/config.hpp"

#include <array>
#include <stdexcept>
#include <utility>

namespace mtsf {

namespace {

constexpr std::array<std::pair<Variant, std::string_view>, 5> kVariantNames{{
    {Variant::kTptTransformer, "tpt-transformer"},
    {Variant::kTvtTransformer, "tvt-transformer"},
    {Variant::kTvtLinear, "tvt-linear"},
    {Variant::kMlp, "mlp"},
    {Variant::kMixer, "mixer"},
}};

std::string_view tokenization_name(Tokenization t) { return t == Tokenization::kTimePoint ? "tpt" : "tvt"; }

Tokenization parse_tokenization(const std::string& s) {
  if (s == "tpt") return Tokenization::kTimePoint;
  if (s == "tvt") return Tokenization::kTimeVariable;
  throw std::invalid_argument("unknown tokenization '" + s + "'");
}

std::string_view decoder_name(DecoderKind d) {
  switch (d) {
    case DecoderKind::kTransformer: return "transformer";
    case DecoderKind::kLinear: return "linear";
    case DecoderKind::kNone: return "none";
    case DecoderKind::kMixer: return "mixer";
  }
  return "?";
}

DecoderKind parse_decoder(const std::string& s) {
  if (s == "transformer") return DecoderKind::kTransformer;
  if (s == "linear") return DecoderKind::kLinear;
  if (s == "none") return DecoderKind::kNone;
  if (s == "mixer") return DecoderKind::kMixer;
  throw std::invalid_argument("unknown decoder kind '" + s + "'");
}

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument("invalid model config: " + message);
}

}  // namespace

void ModelConfig::validate() const {
  require(num_vars >= 2, "K must be at least 2 (multivariate input), got " + std::to_string(num_vars));
  require(input_len >= 1, "L must be positive");
  require(horizon >= 1, "H must be at least 1");
  require(d_model >= 1, "D must be positive");
  require(n_heads >= 1 && d_model % n_heads == 0,
          "D=" + std::to_string(d_model) + " is not divisible by n_heads=" + std::to_string(n_heads));
  require(d_ff >= 1, "d_ff must be positive");
  require(start_len <= input_len, "L_start=" + std::to_string(start_len) + " exceeds L=" + std::to_string(input_len));
  if (tokenization == Tokenization::kTimePoint) {
    require(decoder == DecoderKind::kTransformer, "time-point tokenization is only built with a Transformer decoder");
  }
  if (decoder == DecoderKind::kTransformer) {
    require(n_dec.has_value(), "a Transformer decoder needs n_dec");
  } else {
    require(!n_dec.has_value(), "n_dec must be unset without a Transformer decoder");
  }
}

Variant ModelConfig::variant() const {
  if (tokenization == Tokenization::kTimePoint) return Variant::kTptTransformer;
  switch (decoder) {
    case DecoderKind::kTransformer: return Variant::kTvtTransformer;
    case DecoderKind::kLinear: return Variant::kTvtLinear;
    case DecoderKind::kNone: return Variant::kMlp;
    case DecoderKind::kMixer: return Variant::kMixer;
  }
  throw std::logic_error("unreachable decoder kind");
}

ModelConfig default_config(Variant variant, std::size_t num_vars, std::size_t input_len, std::size_t horizon) {
  ModelConfig cfg;
  cfg.num_vars = num_vars;
  cfg.input_len = input_len;
  cfg.horizon = horizon;
  cfg.start_len = input_len / 2;
  cfg.n_enc = 2;
  cfg.n_dec.reset();
  switch (variant) {
    case Variant::kTptTransformer:
      cfg.tokenization = Tokenization::kTimePoint;
      cfg.decoder = DecoderKind::kTransformer;
      cfg.d_model = 128;
      cfg.n_dec = 1;
      cfg.embeddings = {.positional = true, .stamp = true};
      break;
    case Variant::kTvtTransformer:
      cfg.tokenization = Tokenization::kTimeVariable;
      cfg.decoder = DecoderKind::kTransformer;
      cfg.d_model = input_len;
      cfg.n_dec = 1;
      break;
    case Variant::kTvtLinear:
      cfg.tokenization = Tokenization::kTimeVariable;
      cfg.decoder = DecoderKind::kLinear;
      cfg.d_model = input_len;
      break;
    case Variant::kMlp:
      cfg.tokenization = Tokenization::kTimeVariable;
      cfg.decoder = DecoderKind::kNone;
      cfg.d_model = input_len;
      break;
    case Variant::kMixer:
      cfg.tokenization = Tokenization::kTimeVariable;
      cfg.decoder = DecoderKind::kMixer;
      cfg.d_model = input_len;
      break;
  }
  cfg.n_heads = cfg.d_model % 8 == 0 ? 8 : 1;
  cfg.d_ff = 4 * cfg.d_model;
  return cfg;
}

std::string_view to_string(Variant v) {
  for (const auto& [variant, name] : kVariantNames) {
    if (variant == v) return name;
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (const auto& [variant, n] : kVariantNames) {
    if (n == name) return variant;
  }
  throw std::invalid_argument("unknown variant '" + std::string(name) +
                              "' (expected tpt-transformer, tvt-transformer, tvt-linear, mlp or mixer)");
}

nlohmann::json to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["tokenization"] = tokenization_name(cfg.tokenization);
  j["decoder"] = decoder_name(cfg.decoder);
  j["K"] = cfg.num_vars;
  j["L"] = cfg.input_len;
  j["H"] = cfg.horizon;
  j["D"] = cfg.d_model;
  j["L_start"] = cfg.start_len;
  j["n_enc"] = cfg.n_enc;
  j["n_dec"] = cfg.n_dec ? nlohmann::json(*cfg.n_dec) : nlohmann::json(nullptr);
  j["n_heads"] = cfg.n_heads;
  j["d_ff"] = cfg.d_ff;
  j["embeddings"] = {{"positional", cfg.embeddings.positional}, {"stamp", cfg.embeddings.stamp}};
  j["pad_value"] = cfg.pad_value;
  j["post_norm"] = cfg.post_norm;
  j["seed"] = cfg.seed;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.tokenization = parse_tokenization(j.at("tokenization").get<std::string>());
  cfg.decoder = parse_decoder(j.at("decoder").get<std::string>());
  cfg.num_vars = j.at("K").get<std::size_t>();
  cfg.input_len = j.at("L").get<std::size_t>();
  cfg.horizon = j.at("H").get<std::size_t>();
  cfg.d_model = j.at("D").get<std::size_t>();
  cfg.start_len = j.at("L_start").get<std::size_t>();
  cfg.n_enc = j.at("n_enc").get<std::size_t>();
  if (j.contains("n_dec") && !j.at("n_dec").is_null()) cfg.n_dec = j.at("n_dec").get<std::size_t>();
  cfg.n_heads = j.at("n_heads").get<std::size_t>();
  cfg.d_ff = j.at("d_ff").get<std::size_t>();
  cfg.embeddings.positional = j.at("embeddings").at("positional").get<bool>();
  cfg.embeddings.stamp = j.at("embeddings").at("stamp").get<bool>();
  cfg.pad_value = j.value("pad_value", 0.0);
  cfg.post_norm = j.value("post_norm", false);
  cfg.seed = j.value("seed", std::uint64_t{0});
  return cfg;
}

}  // namespace mtsf
