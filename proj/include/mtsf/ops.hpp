#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>

#include "mtsf/tensor.hpp"

namespace mtsf {

/// Thrown by debug builds when an op produces NaN or Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Every op below records a pullback on the active tape when any input
// requires grad. Outputs are fresh tensors; inputs are never modified.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// x[m x n] + v[n] broadcast over rows.
Tensor add_row_vector(const Tensor& x, const Tensor& v);

/// Row-wise softmax, stabilized by subtracting the row max.
Tensor softmax_rows(const Tensor& x);

inline constexpr double kLayerNormEps = 1e-5;
/// Per-row normalization to zero mean and unit (biased) variance, then gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = kLayerNormEps);

/// Exact GELU, x * Phi(x).
Tensor gelu(const Tensor& x);

/// Width-3, stride-1 convolution along time with circular padding.
/// x: K x L, weights: D x K x 3, bias: D. Returns D x L.
Tensor conv1d_width3(const Tensor& x, const Tensor& weights, const Tensor& bias);

Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor sum(const Tensor& x);

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);

/// p <- p - lr * grad for every tensor, then clears the gradients.
void sgd_step(std::span<Tensor> params, double lr);

}  // namespace mtsf
