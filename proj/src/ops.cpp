#include "mtsf/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <string>

namespace mtsf {

namespace {

using detail::Access;
using detail::TensorStorage;
using StoragePtr = std::shared_ptr<TensorStorage>;

// Single-threaded GEMM keeps the reduction order fixed for a given build.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double beta, double* c) {
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
  const int lda = static_cast<int>(trans_a ? m : k);
  const int ldb = static_cast<int>(trans_b ? k : n);
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a, lda, b, ldb, beta, c,
              static_cast<int>(n));
}

Tape* tape_for(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = Tape::active();
  if (!tape) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

StoragePtr mark_output(const Tensor& out) {
  auto s = Access::share(out);
  s->requires_grad = true;
  s->is_leaf = false;
  return s;
}

void check_finite([[maybe_unused]] const Tensor& out, [[maybe_unused]] const char* op) {
#ifndef NDEBUG
  for (double v : out.data()) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string(op) + " produced a non-finite value");
  }
#endif
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + " needs a rank-2 tensor, got " + shape_to_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  Tensor out({m, n});
  gemm(false, false, m, n, k, a.data().data(), b.data().data(), 0.0, out.mutable_data().data());
  check_finite(out, "matmul");
  if (Tape* tape = tape_for({&a, &b})) {
    tape->record([as = Access::share(a), bs = Access::share(b), os = mark_output(out), m, n, k] {
      if (os->grad.empty()) return;
      const double* g = os->grad.data();
      if (as->requires_grad) gemm(false, true, m, k, n, g, bs->data.data(), 1.0, as->grad_buffer());
      if (bs->requires_grad) gemm(true, false, k, n, m, as->data.data(), g, 1.0, bs->grad_buffer());
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({n, m});
  auto src = a.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  if (Tape* tape = tape_for({&a})) {
    tape->record([as = Access::share(a), os = mark_output(out), m, n] {
      if (os->grad.empty()) return;
      double* ga = as->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += os->grad[j * m + i];
    });
  }
  return out;
}

namespace {

Tensor add_scaled(const Tensor& a, const Tensor& b, double sign, const char* op) {
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  auto x = a.data(), y = b.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + sign * y[i];
  check_finite(out, op);
  if (Tape* tape = tape_for({&a, &b})) {
    tape->record([as = Access::share(a), bs = Access::share(b), os = mark_output(out), sign] {
      if (os->grad.empty()) return;
      const auto& g = os->grad;
      if (as->requires_grad) {
        double* ga = as->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bs->requires_grad) {
        double* gb = bs->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_scaled(a, b, 1.0, "add"); }

Tensor sub(const Tensor& a, const Tensor& b) { return add_scaled(a, b, -1.0, "sub"); }

Tensor scale(const Tensor& a, double factor) {
  Tensor out(a.shape());
  auto x = a.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = factor * x[i];
  check_finite(out, "scale");
  if (Tape* tape = tape_for({&a})) {
    tape->record([as = Access::share(a), os = mark_output(out), factor] {
      if (os->grad.empty()) return;
      double* ga = as->grad_buffer();
      for (std::size_t i = 0; i < os->grad.size(); ++i) ga[i] += factor * os->grad[i];
    });
  }
  return out;
}

Tensor add_row_vector(const Tensor& x, const Tensor& v) {
  require_rank2(x, "add_row_vector");
  const std::size_t m = x.rows(), n = x.cols();
  if (v.numel() != n) {
    throw DimensionError("add_row_vector: " + shape_to_string(v.shape()) + " cannot broadcast over " +
                         shape_to_string(x.shape()));
  }
  Tensor out(x.shape());
  auto xs = x.data(), vs = v.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = xs[i * n + j] + vs[j];
  check_finite(out, "add_row_vector");
  if (Tape* tape = tape_for({&x, &v})) {
    tape->record([xs_ = Access::share(x), vs_ = Access::share(v), os = mark_output(out), m, n] {
      if (os->grad.empty()) return;
      const auto& g = os->grad;
      if (xs_->requires_grad) {
        double* gx = xs_->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (vs_->requires_grad) {
        double* gv = vs_->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
      }
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require_rank2(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out(x.shape());
  auto xs = x.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xs.data() + i * n;
    double* orow = o.data() + i * n;
    const double peak = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - peak);
      total += orow[j];
    }
    for (std::size_t j = 0; j < n; ++j) orow[j] /= total;
  }
  check_finite(out, "softmax_rows");
  if (Tape* tape = tape_for({&x})) {
    tape->record([xs_ = Access::share(x), os = mark_output(out), m, n] {
      if (os->grad.empty()) return;
      const double* y = os->data.data();
      const double* g = os->grad.data();
      double* gx = xs_->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t m = x.rows(), d = x.cols();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain " + shape_to_string(gain.shape()) + " / bias " +
                         shape_to_string(bias.shape()) + " do not match width of " + shape_to_string(x.shape()));
  }
  Tensor out(x.shape());
  std::vector<double> normalized(m * d);
  std::vector<double> inv_std(m);
  auto xs = x.data(), gs = gain.data(), bs = bias.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xs.data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double xhat = (row[j] - mean) * inv_std[i];
      normalized[i * d + j] = xhat;
      o[i * d + j] = xhat * gs[j] + bs[j];
    }
  }
  check_finite(out, "layer_norm");
  if (Tape* tape = tape_for({&x, &gain, &bias})) {
    tape->record([xs_ = Access::share(x), gs_ = Access::share(gain), bs_ = Access::share(bias),
                  os = mark_output(out), normalized = std::move(normalized), inv_std = std::move(inv_std), m, d] {
      if (os->grad.empty()) return;
      const double* g = os->grad.data();
      if (gs_->requires_grad) {
        double* gg = gs_->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * normalized[i * d + j];
      }
      if (bs_->requires_grad) {
        double* gb = bs_->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
      }
      if (xs_->requires_grad) {
        double* gx = xs_->grad_buffer();
        const double* gamma = gs_->data.data();
        const double width = static_cast<double>(d);
        for (std::size_t i = 0; i < m; ++i) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double gh = g[i * d + j] * gamma[j];
            sum_g += gh;
            sum_gx += gh * normalized[i * d + j];
          }
          for (std::size_t j = 0; j < d; ++j) {
            const double gh = g[i * d + j] * gamma[j];
            gx[i * d + j] += inv_std[i] / width * (width * gh - sum_g - normalized[i * d + j] * sum_gx);
          }
        }
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  auto xs = x.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xs[i] * 0.5 * std::erfc(-xs[i] * std::numbers::sqrt2 / 2.0);
  check_finite(out, "gelu");
  if (Tape* tape = tape_for({&x})) {
    tape->record([xs_ = Access::share(x), os = mark_output(out)] {
      if (os->grad.empty()) return;
      double* gx = xs_->grad_buffer();
      const double inv_sqrt_2pi = std::numbers::inv_sqrtpi / std::numbers::sqrt2;
      for (std::size_t i = 0; i < os->grad.size(); ++i) {
        const double v = xs_->data[i];
        const double cdf = 0.5 * std::erfc(-v * std::numbers::sqrt2 / 2.0);
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        gx[i] += os->grad[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor conv1d_width3(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  require_rank2(x, "conv1d_width3");
  const std::size_t k_in = x.rows(), len = x.cols();
  if (weights.rank() != 3 || weights.shape()[1] != k_in || weights.shape()[2] != 3) {
    throw DimensionError("conv1d_width3: weights " + shape_to_string(weights.shape()) + " incompatible with input " +
                         shape_to_string(x.shape()));
  }
  const std::size_t d_out = weights.shape()[0];
  if (bias.numel() != d_out) {
    throw DimensionError("conv1d_width3: bias " + shape_to_string(bias.shape()) + " does not match " +
                         std::to_string(d_out) + " output channels");
  }
  Tensor out({d_out, len});
  auto xs = x.data(), ws = weights.data(), bs = bias.data();
  auto o = out.mutable_data();
  // tap o reads x[:, (t + o - 1) mod len]
  auto source = [len](std::size_t t, std::size_t tap) { return (t + len + tap - 1) % len; };
  for (std::size_t d = 0; d < d_out; ++d) {
    for (std::size_t t = 0; t < len; ++t) {
      double acc = bs[d];
      for (std::size_t k = 0; k < k_in; ++k)
        for (std::size_t tap = 0; tap < 3; ++tap) acc += ws[(d * k_in + k) * 3 + tap] * xs[k * len + source(t, tap)];
      o[d * len + t] = acc;
    }
  }
  check_finite(out, "conv1d_width3");
  if (Tape* tape = tape_for({&x, &weights, &bias})) {
    tape->record([xs_ = Access::share(x), ws_ = Access::share(weights), bs_ = Access::share(bias),
                  os = mark_output(out), k_in, len, d_out, source] {
      if (os->grad.empty()) return;
      const double* g = os->grad.data();
      double* gx = xs_->requires_grad ? xs_->grad_buffer() : nullptr;
      double* gw = ws_->requires_grad ? ws_->grad_buffer() : nullptr;
      double* gb = bs_->requires_grad ? bs_->grad_buffer() : nullptr;
      for (std::size_t d = 0; d < d_out; ++d) {
        for (std::size_t t = 0; t < len; ++t) {
          const double gv = g[d * len + t];
          if (gb) gb[d] += gv;
          for (std::size_t k = 0; k < k_in; ++k) {
            for (std::size_t tap = 0; tap < 3; ++tap) {
              const std::size_t w_idx = (d * k_in + k) * 3 + tap;
              const std::size_t x_idx = k * len + source(t, tap);
              if (gw) gw[w_idx] += gv * xs_->data[x_idx];
              if (gx) gx[x_idx] += gv * ws_->data[w_idx];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_loss");
  auto p = pred.data(), t = target.data();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - t[i]) * (p[i] - t[i]);
  const double count = static_cast<double>(p.size());
  Tensor out = Tensor::scalar(total / count);
  check_finite(out, "mse_loss");
  if (Tape* tape = tape_for({&pred, &target})) {
    tape->record([ps = Access::share(pred), ts = Access::share(target), os = mark_output(out), count] {
      if (os->grad.empty()) return;
      const double g = os->grad[0] * 2.0 / count;
      double* gp = ps->requires_grad ? ps->grad_buffer() : nullptr;
      double* gt = ts->requires_grad ? ts->grad_buffer() : nullptr;
      for (std::size_t i = 0; i < ps->data.size(); ++i) {
        const double diff = ps->data[i] - ts->data[i];
        if (gp) gp[i] += g * diff;
        if (gt) gt[i] -= g * diff;
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor out = Tensor::scalar(total);
  if (Tape* tape = tape_for({&x})) {
    tape->record([xs = Access::share(x), os = mark_output(out)] {
      if (os->grad.empty()) return;
      double* gx = xs->grad_buffer();
      for (std::size_t i = 0; i < xs->data.size(); ++i) gx[i] += os->grad[0];
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank2(x, "slice_rows");
  const std::size_t n = x.cols();
  if (count == 0 || begin + count > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_to_string(x.shape()));
  }
  auto src = x.data().subspan(begin * n, count * n);
  Tensor out({count, n}, std::vector<double>(src.begin(), src.end()));
  if (Tape* tape = tape_for({&x})) {
    tape->record([xs = Access::share(x), os = mark_output(out), offset = begin * n] {
      if (os->grad.empty()) return;
      double* gx = xs->grad_buffer() + offset;
      for (std::size_t i = 0; i < os->grad.size(); ++i) gx[i] += os->grad[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank2(x, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (count == 0 || begin + count > n) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_to_string(x.shape()));
  }
  Tensor out({m, count});
  auto src = x.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(src.data() + i * n + begin, count, dst.data() + i * count);
  if (Tape* tape = tape_for({&x})) {
    tape->record([xs = Access::share(x), os = mark_output(out), m, n, begin, count] {
      if (os->grad.empty()) return;
      double* gx = xs->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) gx[i * n + begin + j] += os->grad[i * count + j];
    });
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows needs at least one tensor");
  const std::size_t n = parts.front().cols();
  std::size_t total_rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) {
      throw DimensionError("concat_rows: width mismatch " + shape_to_string(parts.front().shape()) + " vs " +
                           shape_to_string(p.shape()));
    }
    total_rows += p.rows();
  }
  Tensor out({total_rows, n});
  auto dst = out.mutable_data();
  std::size_t offset = 0;
  bool tracked = false;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), dst.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.numel();
    tracked = tracked || p.requires_grad();
  }
  if (Tape* tape = Tape::active(); tape && tracked) {
    std::vector<StoragePtr> inputs;
    for (const auto& p : parts) inputs.push_back(Access::share(p));
    tape->record([inputs = std::move(inputs), os = mark_output(out)] {
      if (os->grad.empty()) return;
      std::size_t offset = 0;
      for (const auto& in : inputs) {
        if (in->requires_grad) {
          double* g = in->grad_buffer();
          for (std::size_t i = 0; i < in->data.size(); ++i) g[i] += os->grad[offset + i];
        }
        offset += in->data.size();
      }
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols needs at least one tensor");
  const std::size_t m = parts.front().rows();
  std::size_t total_cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) {
      throw DimensionError("concat_cols: height mismatch " + shape_to_string(parts.front().shape()) + " vs " +
                           shape_to_string(p.shape()));
    }
    total_cols += p.cols();
  }
  Tensor out({m, total_cols});
  auto dst = out.mutable_data();
  std::size_t col = 0;
  bool tracked = false;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    auto src = p.data();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(src.data() + i * w, w, dst.data() + i * total_cols + col);
    col += w;
    tracked = tracked || p.requires_grad();
  }
  if (Tape* tape = Tape::active(); tape && tracked) {
    std::vector<StoragePtr> inputs;
    for (const auto& p : parts) inputs.push_back(Access::share(p));
    tape->record([inputs = std::move(inputs), os = mark_output(out), m, total_cols] {
      if (os->grad.empty()) return;
      std::size_t col = 0;
      for (const auto& in : inputs) {
        const std::size_t w = in->shape[1];
        if (in->requires_grad) {
          double* g = in->grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) g[i * w + j] += os->grad[i * total_cols + col + j];
        }
        col += w;
      }
    });
  }
  return out;
}

void sgd_step(std::span<Tensor> params, double lr) {
  for (const auto& p : params) {
    if (!p.has_grad()) throw std::logic_error("sgd_step: parameter " + shape_to_string(p.shape()) + " has no gradient");
  }
  for (auto& p : params) {
    auto& s = Access::get(p);
    for (std::size_t i = 0; i < s.data.size(); ++i) s.data[i] -= lr * s.grad[i];
    p.zero_grad();
  }
}

}  // namespace mtsf
