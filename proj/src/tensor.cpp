#include "gaze/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <numeric>
#include <type_traits>
#include <unordered_set>
#include <utility>

#include "gaze/errors.hpp"

namespace gaze {
namespace {

thread_local bool g_recording = true;

template <typename T>
void require_finite(const char* op, const std::vector<T>& values) {
  // A value is non-finite iff its exponent bits are all set. The branch-free
  // OR-reduction over the bit patterns vectorizes.
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits exponent = static_cast<Bits>(sizeof(T) == 4 ? 0x7f800000ull : 0x7ff0000000000000ull);
  Bits bad = 0;
  for (T v : values) bad |= static_cast<Bits>((std::bit_cast<Bits>(v) & exponent) == exponent);
  if (bad) throw NumericalError(std::string("non-finite value produced by ") + op);
}

}  // namespace

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  for (std::size_t d : dims_) {
    if (d == 0) throw ValidationError("shape extents must be positive");
  }
}

std::size_t Shape::numel() const {
  return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>());
}

std::string Shape::str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims_[i]);
  }
  return s + "]";
}

bool grad_recording_enabled() { return g_recording; }

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  return from_data(shape, std::vector<T>(shape.numel(), value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_data(const Shape& shape, std::vector<T> data,
                                         bool requires_grad) {
  if (data.size() != shape.numel()) {
    throw ValidationError("data length " + std::to_string(data.size()) + " does not match shape " +
                          shape.str());
  }
  require_finite("from_data", data);
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = shape;
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return BasicTensor(std::move(node));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return from_data(Shape{}, {value}, requires_grad);
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_data() {
  if (!node_->is_leaf()) throw ValidationError("op outputs are immutable");
  return node_->value;
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ValidationError("item() on tensor of shape " + shape().str());
  return node_->value[0];
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool on) {
  if (!node_->is_leaf()) throw ValidationError("requires_grad can only be set on leaves");
  node_->requires_grad = on;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return from_data(shape(), node_->value, false);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::make_result(const char* op, const Shape& shape,
                                           std::vector<T> value,
                                           std::initializer_list<BasicTensor> inputs,
                                           BackwardFn backward) {
  return make_result(op, shape, std::move(value), std::vector<BasicTensor>(inputs),
                     std::move(backward));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::make_result(const char* op, const Shape& shape,
                                           std::vector<T> value,
                                           const std::vector<BasicTensor>& inputs,
                                           BackwardFn backward) {
  require_finite(op, value);
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = shape;
  node->value = std::move(value);
  node->op = op;
  const bool any_grad =
      std::any_of(inputs.begin(), inputs.end(), [](const BasicTensor& t) { return t.requires_grad(); });
  if (g_recording && any_grad) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node_);
  }
  return BasicTensor(std::move(node));
}

template <typename T>
std::vector<const detail::Node<T>*> recorded_ops(const BasicTensor<T>& root) {
  std::vector<const detail::Node<T>*> order;
  if (!root.defined() || root.is_leaf()) return order;
  std::unordered_set<const detail::Node<T>*> visited;
  // Iterative post-order DFS: (node, next input index).
  std::vector<std::pair<const detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(&root.node(), 0);
  visited.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const detail::Node<T>* child = node->inputs[next++].get();
      if (!child->is_leaf() && child->requires_grad && visited.insert(child).second)
        stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <typename T>
void BasicTensor<T>::backward() const {
  if (numel() != 1) throw ValidationError("backward() requires a scalar, got " + shape().str());
  if (!requires_grad())
    throw ValidationError("backward(): loss is not connected to any tensor requiring grad");
  if (is_leaf()) {
    node_->grad_buffer()[0] += T(1);
    return;
  }
  auto order = recorded_ops(*this);
  for (const auto* n : order) {
    auto* node = const_cast<detail::Node<T>*>(n);
    node->grad.assign(node->value.size(), T(0));
  }
  node_->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = const_cast<detail::Node<T>*>(*it);
    node->backward(*node);
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template std::vector<const detail::Node<float>*> recorded_ops(const BasicTensor<float>&);
template std::vector<const detail::Node<double>*> recorded_ops(const BasicTensor<double>&);

}  // namespace gaze
