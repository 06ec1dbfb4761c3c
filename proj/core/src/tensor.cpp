#include "imsm/tensor.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace imsm {

namespace {
std::size_t numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw UsageError("tensor: negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}
}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->data.assign(numel(shape), 0.0);
  t.impl_->shape = std::move(shape);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.values()) v = value;
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values,
                    bool requires_grad) {
  if (numel(shape) != values.size())
    throw DimensionError("tensor: shape does not match value count");
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(values);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1, 1}, {value}, requires_grad);
}

int Tensor::rows() const {
  if (impl_->shape.size() != 2) throw UsageError("tensor: rows() needs 2-D");
  return impl_->shape[0];
}

int Tensor::cols() const {
  if (impl_->shape.size() != 2) throw UsageError("tensor: cols() needs 2-D");
  return impl_->shape[1];
}

double& Tensor::at(int r, int c) {
  return impl_->data[static_cast<std::size_t>(r) * cols() + c];
}

double Tensor::at(int r, int c) const {
  return impl_->data[static_cast<std::size_t>(r) * cols() + c];
}

double Tensor::item() const {
  if (size() != 1) throw UsageError("tensor: item() on non-scalar");
  return impl_->data[0];
}

std::vector<double>& Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  for (double& g : impl_->grad) g = 0.0;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

void Tensor::check_finite(const char* op) const {
  for (double v : impl_->data) {
    if (!std::isfinite(v))
      throw NumericError(std::string(op) + ": non-finite value in output");
  }
}

void Tape::backward(Tensor loss) {
  if (loss.size() != 1) throw UsageError("backward: loss must be a scalar");
  loss.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

}  // namespace imsm
