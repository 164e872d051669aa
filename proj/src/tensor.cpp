#include "rceed/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace rceed {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<TensorNode<T>>()) {
  check_extents(shape);
  node_->data.assign(numel(shape), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<TensorNode<T>>()) {
  check_extents(shape);
  if (numel(shape) != values.size())
    throw DimensionError("shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  node_->data = std::move(values);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
  std::vector<T> values;
  const std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), r.begin(), r.end());
  }
  return Tensor(Shape{rows.size(), cols}, std::move(values));
}

template <typename T>
Tensor<T> Tensor<T>::vector(std::initializer_list<T> values) {
  return Tensor(Shape{values.size()}, std::vector<T>(values));
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

namespace {

template <typename T>
std::size_t flat_index(const Shape& shape, std::initializer_list<std::size_t> index) {
  if (index.size() != shape.size())
    throw IndexError("index rank " + std::to_string(index.size()) + " for shape " + shape_str(shape));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape[axis]) throw IndexError("index out of range for shape " + shape_str(shape));
    flat = flat * shape[axis] + i;
    ++axis;
  }
  return flat;
}

}  // namespace

template <typename T>
T& Tensor<T>::at(std::initializer_list<std::size_t> index) {
  return node_->data[flat_index<T>(shape(), index)];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  return node_->data[flat_index<T>(shape(), index)];
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(shape(), node_->data);
}

template <typename T>
Tensor<T> Tensor<T>::wrap(std::shared_ptr<TensorNode<T>> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template <typename T>
Tape<T>*& Tape<T>::active_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

template <typename T>
void Tape<T>::record(std::vector<NodePtr> inputs, NodePtr output, BackwardFn backward) {
  output->requires_grad = true;
  entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& output, const Tensor<T>& seed) {
  if (output.shape() != seed.shape())
    throw DimensionError("backward seed shape " + shape_str(seed.shape()) +
                         " does not match output shape " + shape_str(output.shape()));
  auto& g = output.node()->ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    // Nodes the seed never reached carry no gradient.
    if (it->output->grad.empty()) continue;
    it->backward();
  }
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& output) {
  backward(output, Tensor<T>::ones(output.shape()));
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(Tape<T>::active_slot()) {
  Tape<T>::active_slot() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  Tape<T>::active_slot() = previous_;
}

template <typename T>
NoGradScope<T>::NoGradScope() : previous_(Tape<T>::active_slot()) {
  Tape<T>::active_slot() = nullptr;
}

template <typename T>
NoGradScope<T>::~NoGradScope() {
  Tape<T>::active_slot() = previous_;
}

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t->requires_grad(); });
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template class NoGradScope<float>;
template class NoGradScope<double>;
template bool should_record<float>(std::initializer_list<const Tensor<float>*>);
template bool should_record<double>(std::initializer_list<const Tensor<double>*>);

}  // namespace rceed
