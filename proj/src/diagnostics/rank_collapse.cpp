#include <cmath>
#include <random>
#include <stdexcept>

#include "mtsf/diagnostics.hpp"

namespace mtsf {

namespace {

// a[n x p] * b[p x q], or a * b^T when transpose_b is set.
Tensor mul(const Tensor& a, const Tensor& b, bool transpose_b = false) {
  const std::size_t n = a.rows();
  const std::size_t p = a.cols();
  const std::size_t q = transpose_b ? b.rows() : b.cols();
  Tensor out({n, q});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < q; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < p; ++t) s += a(i, t) * (transpose_b ? b(j, t) : b(t, j));
      out(i, j) = s;
    }
  }
  return out;
}

Tensor columns(const Tensor& w, std::size_t begin, std::size_t count) {
  Tensor out({w.rows(), count});
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = w(r, begin + c);
  return out;
}

Tensor rows_of(const Tensor& w, std::size_t begin, std::size_t count) {
  Tensor out({count, w.cols()});
  for (std::size_t r = 0; r < count; ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) out(r, c) = w(begin + r, c);
  return out;
}

struct HeadMaps {
  Tensor qk;  // W_Q,h W_K,h^T
  Tensor vo;  // W_V,h W_O,h
};

HeadMaps head_maps(const SanLayer& layer, std::size_t h, std::size_t d_qk) {
  const std::size_t b = h * d_qk;
  return {mul(columns(layer.w_q, b, d_qk), columns(layer.w_k, b, d_qk), true),
          mul(columns(layer.w_v, b, d_qk), rows_of(layer.w_o, b, d_qk))};
}

}  // namespace

PureSanStack::PureSanStack(std::vector<SanLayer> layers, std::size_t n_heads)
    : layers_(std::move(layers)), n_heads_(n_heads) {
  if (layers_.empty()) throw std::invalid_argument("a SAN stack needs at least one layer");
  d_model_ = layers_.front().w_q.rows();
  if (n_heads_ == 0 || d_model_ % n_heads_ != 0) throw std::invalid_argument("D must be divisible by the head count");
  for (const auto& l : layers_) {
    for (const Tensor* w : {&l.w_q, &l.w_k, &l.w_v, &l.w_o}) {
      if (w->shape() != Shape{d_model_, d_model_}) throw DimensionError("SAN weights must all be D x D");
    }
  }
}

PureSanStack PureSanStack::random(std::size_t depth, std::size_t n_heads, std::size_t d_model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_model));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<SanLayer> layers(depth);
  for (auto& l : layers) {
    for (Tensor* w : {&l.w_q, &l.w_k, &l.w_v, &l.w_o}) {
      *w = Tensor({d_model, d_model});
      for (double& v : w->mutable_data()) v = dist(rng);
    }
  }
  return PureSanStack(std::move(layers), n_heads);
}

double PureSanStack::beta() const {
  double best = 0.0;
  for (const auto& l : layers_) {
    for (std::size_t h = 0; h < n_heads_; ++h) {
      const HeadMaps maps = head_maps(l, h, head_dim());
      best = std::max(best, norm_l1(maps.qk) * composite_norm(maps.vo));
    }
  }
  return best;
}

double PureSanStack::contraction() const {
  return 4.0 * beta() * static_cast<double>(n_heads_) / std::sqrt(static_cast<double>(head_dim()));
}

void PureSanStack::scale_weights(double s) {
  for (auto& l : layers_) {
    for (Tensor* w : {&l.w_q, &l.w_k, &l.w_v, &l.w_o}) {
      for (double& v : w->mutable_data()) v *= s;
    }
  }
}

Tensor PureSanStack::forward_direct(const Tensor& x, std::size_t layer) const {
  const SanLayer& l = layers_.at(layer);
  const std::size_t n = x.rows();
  const std::size_t d = head_dim();
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor out({n, d_model_});
  for (std::size_t h = 0; h < n_heads_; ++h) {
    const std::size_t b = h * d;
    const Tensor q = mul(x, columns(l.w_q, b, d));
    const Tensor k = mul(x, columns(l.w_k, b, d));
    const Tensor v = mul(x, columns(l.w_v, b, d));
    Tensor p = mul(q, k, true);
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, p(i, j) * inv);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) z += (p(i, j) = std::exp(p(i, j) * inv - mx));
      for (std::size_t j = 0; j < n; ++j) p(i, j) /= z;
    }
    const Tensor head = mul(mul(p, v), rows_of(l.w_o, b, d));
    for (std::size_t i = 0; i < out.numel(); ++i) out.mutable_data()[i] += head[i];
  }
  return out;
}

// Scores split as x_i^T W x_j = (row constant) + a_j + b_ij with
// a_j = m^T W r_j and b_ij = r_i^T W r_j. The row constant cancels in the
// softmax, so P = 1 q^T + Delta with q = softmax(a) and Delta = O(b).
// P 1 = 1 and Delta 1 = 0 give
//   m' = sum_h W_VO^T (m + R^T q) + colmean(Delta R W_VO)
//   R' = sum_h (Delta R W_VO - 1 colmean(Delta R W_VO)^T).
void PureSanStack::forward_split(std::vector<double>& mean, Tensor& res, std::size_t layer) const {
  const SanLayer& l = layers_.at(layer);
  const std::size_t n = res.rows();
  const std::size_t dm = d_model_;
  const double inv = 1.0 / std::sqrt(static_cast<double>(head_dim()));
  std::vector<double> new_mean(dm, 0.0);
  Tensor new_res({n, dm});
  Tensor m_row({1, dm}, std::vector<double>(mean));

  for (std::size_t h = 0; h < n_heads_; ++h) {
    const HeadMaps maps = head_maps(l, h, head_dim());
    const Tensor mw = mul(m_row, maps.qk);     // 1 x D
    const Tensor a = mul(mw, res, true);       // 1 x n
    const Tensor b = mul(mul(res, maps.qk), res, true);  // n x n

    std::vector<double> q(n);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, a[j] * inv);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (q[j] = std::exp(a[j] * inv - mx));
    for (double& v : q) v /= z;

    Tensor delta({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      double zm1 = 0.0;
      for (std::size_t k = 0; k < n; ++k) zm1 += q[k] * std::expm1(b(i, k) * inv);
      for (std::size_t j = 0; j < n; ++j) delta(i, j) = q[j] * (std::expm1(b(i, j) * inv) - zm1) / (1.0 + zm1);
    }

    const Tensor drw = mul(mul(delta, res), maps.vo);  // n x D
    for (std::size_t c = 0; c < dm; ++c) {
      double col_mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) col_mean += drw(i, c);
      col_mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) new_res(i, c) += drw(i, c) - col_mean;
      // W_VO^T (m + R^T q), column c.
      double shift = 0.0;
      for (std::size_t r = 0; r < dm; ++r) {
        double rq = 0.0;
        for (std::size_t i = 0; i < n; ++i) rq += res(i, r) * q[i];
        shift += maps.vo(r, c) * (mean[r] + rq);
      }
      new_mean[c] += shift + col_mean;
    }
  }
  mean = std::move(new_mean);
  res = std::move(new_res);
}

std::vector<double> rank_collapse_bound(double contraction, double r0, std::size_t depth_max) {
  std::vector<double> bound;
  double pow3 = 1.0;
  for (std::size_t l = 0; l <= depth_max; ++l) {
    bound.push_back(std::pow(contraction, (pow3 - 1.0) / 2.0) * std::pow(r0, pow3));
    pow3 *= 3.0;
  }
  return bound;
}

RankCollapseTrace rank_collapse_probe(const RankCollapseOptions& opts) {
  if (opts.depth_max == 0) throw std::invalid_argument("rank-collapse probe needs depth_max >= 1");
  if (opts.n_tokens < 2) throw std::invalid_argument("rank-collapse probe needs at least 2 tokens");
  if (!(opts.contraction > 0.0) || !(opts.input_residual > 0.0)) {
    throw std::invalid_argument("contraction and input residual must be positive");
  }
  PureSanStack stack = PureSanStack::random(opts.depth_max, opts.n_heads, opts.d_model, opts.seed);
  stack.scale_weights(std::pow(opts.contraction / stack.contraction(), 0.25));

  std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> mean(opts.d_model);
  for (double& v : mean) v = normal(rng);
  Tensor res({opts.n_tokens, opts.d_model});
  for (double& v : res.mutable_data()) v = normal(rng);
  res = residual(res);
  const double s = opts.input_residual / composite_norm(res);
  for (double& v : res.mutable_data()) v *= s;

  RankCollapseTrace trace;
  trace.beta = stack.beta();
  trace.contraction = stack.contraction();
  trace.d_qk = stack.head_dim();
  trace.n_heads = stack.n_heads();
  trace.residual_norms.push_back(composite_norm(res));
  for (std::size_t l = 0; l < opts.depth_max; ++l) {
    stack.forward_split(mean, res, l);
    trace.residual_norms.push_back(composite_norm(res));
  }
  trace.bound = rank_collapse_bound(trace.contraction, trace.residual_norms.front(), opts.depth_max);
  return trace;
}

nlohmann::json to_json(const RankCollapseTrace& trace) {
  return {{"beta", trace.beta},
          {"contraction", trace.contraction},
          {"d_qk", trace.d_qk},
          {"n_heads", trace.n_heads},
          {"residual_norms", trace.residual_norms},
          {"bound", trace.bound}};
}

}  // namespace mtsf
