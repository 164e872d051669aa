#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rceed/errors.hpp"

namespace rceed {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Storage shared between Tensor handles. A gradient buffer is allocated on
// first use and always has the same length as `data`.
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;

  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

// Dense row-major n-dimensional array. Copying a Tensor copies the handle,
// not the values; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }
  // Convenience for literals in tests: {{1,2},{3,4}}.
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows);
  static Tensor vector(std::initializer_list<T> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  T* ptr() { return node_->data.data(); }
  const T* ptr() const { return node_->data.data(); }
  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }
  T& at(std::initializer_list<std::size_t> index);
  T at(std::initializer_list<std::size_t> index) const;
  T item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }
  // Gradient view; allocates a zero buffer if none exists yet.
  std::span<const T> grad() const { return node_->ensure_grad(); }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  Tensor clone() const;
  // Same values, no gradient history.
  Tensor detach() const { return clone(); }
  template <typename U>
  Tensor<U> cast() const;

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }
  static Tensor wrap(std::shared_ptr<TensorNode<T>> node);

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

// Define-by-run record of differentiable operations. Operations append to
// the tape that is active on the current thread (see TapeScope); recording
// order is a topological order of the graph.
template <typename T>
class Tape {
 public:
  using NodePtr = std::shared_ptr<TensorNode<T>>;
  using BackwardFn = std::function<void()>;

  struct Entry {
    std::vector<NodePtr> inputs;
    NodePtr output;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<NodePtr> inputs, NodePtr output, BackwardFn backward);
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

  // Seeds `output` with `seed` and runs every recorded backward rule once,
  // newest first. Gradients accumulate into requires_grad leaves.
  void backward(const Tensor<T>& output, const Tensor<T>& seed);
  // Scalar output; seed of one.
  void backward(const Tensor<T>& output);
  void clear() { entries_.clear(); }

  static Tape* active() { return active_slot(); }
  static Tape*& active_slot();

 private:
  std::vector<Entry> entries_;
};

// Makes `tape` the active recorder for Tensor<T> operations on this thread
// for the lifetime of the scope.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Suspends recording for the lifetime of the scope.
template <typename T>
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

// True when an operation on `inputs` must be recorded.
template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs);

template <typename T>
template <typename U>
Tensor<U> Tensor<T>::cast() const {
  std::vector<U> values(size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<U>(node_->data[i]);
  Tensor<U> out(shape(), std::move(values));
  out.set_requires_grad(requires_grad());
  return out;
}

}  // namespace rceed
