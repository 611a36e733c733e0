#include "mtsf/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace mtsf {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

TensorStorage& Access::get(const Tensor& t) {
  t.require_defined();
  return *t.impl_;
}

std::shared_ptr<TensorStorage> Access::share(const Tensor& t) {
  t.require_defined();
  return t.impl_;
}

}  // namespace detail

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) {
  validate_shape(shape);
  impl_ = std::make_shared<detail::TensorStorage>();
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_to_string(shape) + " needs " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  impl_ = std::make_shared<detail::TensorStorage>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw DimensionError("matrix literal needs at least one row");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> values;
  values.reserve(rows.size() * cols);
  for (const auto& row : rows) {
    if (row.size() != cols) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(values));
}

Tensor Tensor::from_values(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

void Tensor::require_defined() const {
  if (!impl_) throw std::logic_error("use of an undefined tensor");
}

const Shape& Tensor::shape() const {
  require_defined();
  return impl_->shape;
}

std::size_t Tensor::numel() const {
  require_defined();
  return impl_->data.size();
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("rows() needs a rank-2 tensor, got " + shape_to_string(shape()));
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("cols() needs a rank-2 tensor, got " + shape_to_string(shape()));
  return impl_->shape[1];
}

std::span<const double> Tensor::data() const {
  require_defined();
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  require_defined();
  return impl_->data;
}

double Tensor::operator()(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }

double& Tensor::operator()(std::size_t r, std::size_t c) { return impl_->data[r * cols() + c]; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() needs a single-element tensor, got " + shape_to_string(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const {
  require_defined();
  return impl_->requires_grad;
}

Tensor& Tensor::set_requires_grad(bool flag) {
  require_defined();
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const {
  require_defined();
  return !impl_->grad.empty();
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return impl_->grad;
}

void Tensor::zero_grad() {
  require_defined();
  impl_->grad.clear();
}

Tensor Tensor::clone() const {
  require_defined();
  Tensor copy(impl_->shape, impl_->data);
  copy.impl_->requires_grad = impl_->requires_grad && impl_->is_leaf;
  return copy;
}

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = previous_;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> pullback) {
  if (consumed_) throw std::logic_error("cannot record onto a tape that was already replayed");
  nodes_.push_back(std::move(pullback));
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("backward called twice on a single-use tape");
  if (loss.numel() != 1) throw DimensionError("backward needs a scalar loss, got " + shape_to_string(loss.shape()));
  auto& storage = detail::Access::get(loss);
  if (!storage.requires_grad) throw std::logic_error("loss does not depend on any tensor that requires grad");
  consumed_ = true;
  storage.grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  nodes_.clear();
  nodes_.shrink_to_fit();
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (!tape) throw std::logic_error("backward called without an active tape");
  tape->backward(loss);
}

}  // namespace mtsf
