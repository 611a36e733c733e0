#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtsf/data.hpp"
#include "mtsf/model/forecast_model.hpp"
#include "mtsf/tensor.hpp"
#include "mtsf/train.hpp"

namespace mtsf {

/// Pairwise Euclidean distances between the H columns of a K x H matrix.
Tensor euclid_matrix(const Tensor& y);

struct SimilarityMap {
  Tensor values;               // H x H
  std::string source;          // "prediction" or "ground_truth"
  std::string dataset;
  std::size_t horizon = 0;
  std::size_t n_windows = 1;  // > 1 for averaged maps
};

/// Negated row softmax of euclid_matrix(y). Rows sum to -1; larger (closer to
/// zero) means more similar.
SimilarityMap token_sim(const Tensor& y, const std::string& source = "prediction");
/// Element-wise mean of maps with equal shape.
SimilarityMap average_maps(std::span<const SimilarityMap> maps);

/// Which rank-1 shift RES subtracts: the column mean (least squares) or the
/// column median (least absolute deviations).
enum class ResidualMode { kMean, kMedian };

/// X - 1 x^T with x the column mean (or median) of X.
Tensor residual(const Tensor& x, ResidualMode mode = ResidualMode::kMean);
/// sqrt(max abs column sum * max abs row sum).
double composite_norm(const Tensor& x);
/// Max absolute column sum (induced 1-norm).
double norm_l1(const Tensor& x);
/// Max absolute row sum (induced infinity-norm).
double norm_linf(const Tensor& x);

/// Token-uniformity ratio of a K x H prediction, taken with time points as
/// rows: |RES(Y^T)| / |Y^T| in the composite norm. Throws on an all-zero Y.
double tu_ratio(const Tensor& y, ResidualMode mode = ResidualMode::kMean);

/// A stack of multi-head self-attention layers with no skips, FFN or norms.
struct SanLayer {
  Tensor w_q, w_k, w_v, w_o;  // D x D each; head h uses columns [h d_qk, (h+1) d_qk)
};

class PureSanStack {
 public:
  PureSanStack(std::vector<SanLayer> layers, std::size_t n_heads);
  /// Uniform(-1/sqrt(D), 1/sqrt(D)) weights from the seed.
  static PureSanStack random(std::size_t depth, std::size_t n_heads, std::size_t d_model, std::uint64_t seed);

  std::size_t depth() const { return layers_.size(); }
  std::size_t n_heads() const { return n_heads_; }
  std::size_t d_model() const { return d_model_; }
  std::size_t head_dim() const { return d_model_ / n_heads_; }
  const std::vector<SanLayer>& layers() const { return layers_; }

  /// max over layers and heads of |W_Q,h W_K,h^T|_1 * |W_V,h W_O,h|_{1,inf}.
  double beta() const;
  /// 4 beta H / sqrt(d_qk).
  double contraction() const;
  /// Multiplies every weight by s, which scales beta by s^4.
  void scale_weights(double s);

  /// Plain forward of one layer on X (n x D).
  Tensor forward_direct(const Tensor& x, std::size_t layer) const;
  /// The same layer for X = 1 m^T + R with R column-centred, carried as
  /// (m, R) so that tiny residuals keep full relative precision.
  void forward_split(std::vector<double>& mean, Tensor& res, std::size_t layer) const;

 private:
  std::vector<SanLayer> layers_;
  std::size_t n_heads_;
  std::size_t d_model_;
};

struct RankCollapseOptions {
  std::size_t depth_max = 4;
  std::size_t n_heads = 2;
  std::size_t d_model = 8;
  std::size_t n_tokens = 8;
  std::uint64_t seed = 0;
  double contraction = 0.5;     // weights rescaled so 4 beta H / sqrt(d_qk) equals this
  double input_residual = 0.5;  // |RES(X)|_{1,inf} of the probe input
};

struct RankCollapseTrace {
  std::vector<double> residual_norms;  // depth 0..depth_max
  std::vector<double> bound;           // same indexing
  double beta = 0.0;
  double contraction = 0.0;
  std::size_t d_qk = 0;
  std::size_t n_heads = 0;
};

/// bound[l] = c^((3^l - 1) / 2) * r0^(3^l).
std::vector<double> rank_collapse_bound(double contraction, double r0, std::size_t depth_max);
RankCollapseTrace rank_collapse_probe(const RankCollapseOptions& opts);

/// Every attention score matrix from one forward pass on the window. Throws
/// std::invalid_argument when the model has no Transformer decoder.
AttentionTrace attention_dump(const ForecastModel& model, const SeriesWindow& window);

struct TuCurve {
  std::string variant;
  double lr = 0.0;
  std::vector<double> pred_train;  // one entry per epoch
  std::vector<double> pred_test;
  bool diverged = false;
};

struct TokenUniformityReport {
  std::vector<TuCurve> curves;
  std::vector<double> gt_train;  // per epoch; constant by construction
  std::vector<double> gt_test;
  std::size_t epochs = 0;
};

struct TuStudyEntry {
  ModelConfig config;
  double lr = 0.01;
};

/// Trains each entry for exactly `epochs` epochs (no early stopping) and
/// records the window-averaged TU of predictions and ground truth after each.
TokenUniformityReport tu_training_study(std::span<const TuStudyEntry> entries,
                                        std::span<const SeriesWindow> train_set,
                                        std::span<const SeriesWindow> test_set, std::size_t epochs,
                                        const TrainConfig& base, ResidualMode mode = ResidualMode::kMean);

/// Mean TU over windows, of the model's predictions or of the targets when model is null.
double mean_tu(const ForecastModel* model, std::span<const SeriesWindow> windows, ResidualMode mode);

nlohmann::json to_json(const SimilarityMap& map);
nlohmann::json to_json(const RankCollapseTrace& trace);
nlohmann::json to_json(const TokenUniformityReport& report);

/// One matrix row per line, shortest round-trip decimals.
void write_matrix_csv(const std::filesystem::path& path, const Tensor& m);
/// Binary P5 grayscale, min maps to 0 and max to 255 (all 0 when constant).
void write_pgm(const std::filesystem::path& path, const Tensor& m);
Tensor read_matrix_csv(const std::filesystem::path& path);

}  // namespace mtsf
