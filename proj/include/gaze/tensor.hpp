#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A BasicTensor is a cheap handle onto a shared graph node. Values are
// immutable once an op has produced them; only gradients accumulate. Leaf
// tensors (created directly, not by an op) may have their values rewritten
// in place, which is how optimizers update parameters.
//
// Ops record a backward closure on their output whenever gradient recording
// is enabled and any input requires grad. backward() replays those closures
// in reverse topological order, visiting each recorded op exactly once.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gaze {

class Shape {
 public:
  Shape() = default;  // rank 0: a scalar with one element
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_[axis]; }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t numel() const;
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::size_t> dims_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a backward pass touches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;  // empty for leaves

  bool is_leaf() const { return !backward; }
  /// Grad buffer, zero-initialized on first use.
  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;
  using BackwardFn = std::function<void(detail::Node<T>&)>;

  BasicTensor() = default;

  static BasicTensor zeros(const Shape& shape, bool requires_grad = false);
  static BasicTensor full(const Shape& shape, T value, bool requires_grad = false);
  /// Throws ValidationError if data.size() != shape.numel() or NumericalError
  /// on non-finite data.
  static BasicTensor from_data(const Shape& shape, std::vector<T> data, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape[axis]; }

  std::span<const T> data() const { return node_->value; }
  /// In-place access to a leaf's values. Throws for op outputs.
  std::span<T> mutable_data();
  T item() const;
  T operator[](std::size_t flat_index) const { return node_->value[flat_index]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool is_leaf() const { return node_->is_leaf(); }
  /// Empty span when no gradient has been accumulated.
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad();

  /// Back-propagates from this scalar. Intermediate gradients are reset at
  /// the start; leaf gradients accumulate. Throws ValidationError on a
  /// non-scalar or a loss not connected to any tensor requiring grad.
  void backward() const;

  /// New leaf holding a copy of the values, outside any graph.
  BasicTensor detach() const;

  const char* op_name() const { return node_->op; }
  detail::Node<T>& node() const { return *node_; }
  const NodePtr& node_ptr() const { return node_; }

  /// Builds an op output. The backward closure is recorded only when
  /// recording is enabled and some input requires grad; otherwise it is
  /// dropped and the result is a constant. Throws NumericalError when the
  /// values contain NaN or Inf.
  static BasicTensor make_result(const char* op, const Shape& shape, std::vector<T> value,
                                 std::initializer_list<BasicTensor> inputs, BackwardFn backward);
  static BasicTensor make_result(const char* op, const Shape& shape, std::vector<T> value,
                                 const std::vector<BasicTensor>& inputs, BackwardFn backward);

 private:
  explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Recorded ops reachable from root, inputs before outputs. Each node
/// appears once. Leaves are not included.
template <typename T>
std::vector<const detail::Node<T>*> recorded_ops(const BasicTensor<T>& root);

bool grad_recording_enabled();

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Converts between precisions by copying values into a new leaf.
template <typename To, typename From>
BasicTensor<To> cast(const BasicTensor<From>& x, bool requires_grad = false) {
  std::vector<To> out(x.data().begin(), x.data().end());
  return BasicTensor<To>::from_data(x.shape(), std::move(out), requires_grad);
}

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace gaze
