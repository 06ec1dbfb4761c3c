#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "imsm/errors.hpp"

namespace imsm {

// Dense row-major 64-bit float tensor. Copies are shallow: two Tensor
// values may share the same storage, which is what the tape relies on to
// route gradients back to parameters.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  std::size_t size() const { return impl_->data.size(); }

  // 2-D accessors; a scalar is 1x1.
  int rows() const;
  int cols() const;

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& values() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }

  double& at(int r, int c);
  double at(int r, int c) const;

  // Scalar extraction; throws UsageError unless size()==1.
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  bool has_grad() const { return !impl_->grad.empty(); }
  // Allocates the grad buffer (zeroed) on first use.
  std::vector<double>& grad();
  const std::vector<double>& grad() const { return impl_->grad; }
  void zero_grad();

  // Identity of the underlying storage; used by the optimizer to key state.
  const void* id() const { return impl_.get(); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  // Deep copy with fresh storage (grad not copied).
  Tensor clone() const;

  // Throws NumericError if any element is NaN or Inf.
  void check_finite(const char* op) const;

 private:
  struct Impl {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until requested; same length as data
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

// Reverse-mode tape. Ops append one node per differentiable output; calling
// backward(loss) seeds d(loss)/d(loss)=1 and replays the nodes in reverse,
// accumulating into each tensor's grad buffer additively.
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // loss must be a scalar produced while this tape was recording.
  void backward(Tensor loss);

 private:
  std::vector<std::function<void()>> nodes_;
};

}  // namespace imsm
