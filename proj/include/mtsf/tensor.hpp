#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtsf {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when operand shapes are incompatible. The message names both shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor;

namespace detail {

struct TensorStorage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool is_leaf = true;

  double* grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad.data();
  }
};

struct Access {
  static TensorStorage& get(const Tensor& t);
  static std::shared_ptr<TensorStorage> share(const Tensor& t);
};

}  // namespace detail

/// Dense row-major float64 array with an optional gradient slot.
///
/// Copies are shallow: two Tensor handles may refer to the same storage, which
/// is how model parameters are shared with the tape during a forward pass.
/// Use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor from_values(std::initializer_list<double> values);
  static Tensor scalar(double value);
  static Tensor identity(std::size_t n);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  /// First dimension of a rank-2 tensor.
  std::size_t rows() const;
  /// Second dimension of a rank-2 tensor.
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double operator()(std::size_t r, std::size_t c) const;
  double& operator()(std::size_t r, std::size_t c);
  double operator[](std::size_t i) const { return data()[i]; }
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  Tensor clone() const;
  bool shares_storage_with(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  friend struct detail::Access;
  explicit Tensor(std::shared_ptr<detail::TensorStorage> impl) : impl_(std::move(impl)) {}
  void require_defined() const;

  std::shared_ptr<detail::TensorStorage> impl_;
};

/// Ordered record of differentiable operations executed while it is active.
///
/// Constructing a Tape makes it the active tape of the calling thread until it
/// is destroyed. Operations whose inputs require gradients append a pullback to
/// the active tape. A tape can be replayed backward exactly once.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::function<void()> pullback);
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> nodes_;
  Tape* previous_ = nullptr;
  bool consumed_ = false;
};

/// Runs reverse-mode differentiation of a scalar loss on the active tape.
void backward(const Tensor& loss);

}  // namespace mtsf
