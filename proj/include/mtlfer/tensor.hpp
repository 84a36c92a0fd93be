#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtlfer/errors.hpp"

namespace mtlfer {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

/// Dense row-major tensor with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage, so a parameter
/// captured by a tape record and the copy held by its module see the same
/// values and gradient. Use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    validate(shape);
    s_->values.assign(shape_numel(shape), fill);
    s_->shape = std::move(shape);
    s_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    validate(shape);
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor of shape " + shape_string(shape) + " given " +
                           std::to_string(values.size()) + " values");
    }
    s_->shape = std::move(shape);
    s_->values = std::move(values);
    s_->requires_grad = requires_grad;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{v}, requires_grad);
  }

  bool defined() const { return s_ != nullptr; }

  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return s_->shape.at(axis); }
  std::size_t numel() const { return s_->values.size(); }

  std::span<T> values() { return s_->values; }
  std::span<const T> values() const { return s_->values; }
  T* data() { return s_->values.data(); }
  const T* data() const { return s_->values.data(); }

  T item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_string(shape()));
    return s_->values[0];
  }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  void set_requires_grad(bool on) { s_->requires_grad = on; }

  bool has_grad() const { return !s_->grad.empty(); }

  /// Gradient buffer, allocated as zeros on first access.
  std::span<T> grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->values.size(), T{0});
    return s_->grad;
  }
  std::span<const T> grad() const { return s_->grad; }

  void zero_grad() { std::fill(s_->grad.begin(), s_->grad.end(), T{0}); }
  void drop_grad() { s_->grad.clear(); s_->grad.shrink_to_fit(); }

  Tensor clone() const {
    Tensor t(s_->shape, s_->values, s_->requires_grad);
    return t;
  }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;
    bool requires_grad = false;
  };

  static void validate(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] == 0) {
        throw DimensionError("axis " + std::to_string(i) + " of shape " + shape_string(shape) +
                             " is zero");
      }
    }
  }

  std::shared_ptr<Storage> s_;
};

/// Ordered record of differentiable primitive applications.
///
/// Each record holds the backward rule of one primitive; the closure keeps
/// its operands and output alive. A non-recording tape runs primitives in
/// inference mode: nothing is stored and outputs never require grad.
template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  static Tape inference() { return Tape(false); }

  bool recording() const { return recording_; }
  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }

  /// True when an op with these operands must be recorded.
  template <typename... Ts>
  bool tracks(const Ts&... operands) const {
    return recording_ && (operands.requires_grad() || ...);
  }

  void record(std::function<void()> rule) {
    if (consumed_) throw UsageError("tape already consumed by a backward pass; call reset()");
    records_.push_back(std::move(rule));
  }

  /// Seeds d(loss)/d(loss) = 1 and runs the records in reverse order.
  void backward(Tensor<T>& loss) {
    if (consumed_) throw UsageError("tape already consumed by a backward pass; call reset()");
    if (!loss.defined() || loss.numel() != 1) {
      throw UsageError("backward() needs a scalar loss, got shape " +
                       (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) throw UsageError("loss is not connected to any trainable tensor");
    loss.grad()[0] = T{1};
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    records_.clear();
    consumed_ = true;
  }

  void reset() {
    records_.clear();
    consumed_ = false;
  }

 private:
  std::vector<std::function<void()>> records_;
  bool recording_ = true;
  bool consumed_ = false;
};

template <typename T>
void backward(Tape<T>& tape, Tensor<T>& loss) {
  tape.backward(loss);
}

}  // namespace mtlfer
