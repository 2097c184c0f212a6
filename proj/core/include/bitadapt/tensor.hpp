#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bitadapt {

template <typename T>
concept Real = std::same_as<T, float> || std::same_as<T, double>;

/// Dimension sizes, outermost first. An empty shape denotes a scalar.
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

template <Real T>
class BasicTensor;

namespace detail {

template <Real T>
struct TensorImpl;

/// One recorded primitive op. Inputs are held strongly so a graph stays valid
/// after the forward pass that built it; leaf values must not be mutated
/// between forward and backward.
template <Real T>
class Node {
 public:
  virtual ~Node() = default;

  virtual const char* name() const noexcept = 0;

  /// True for rounding ops whose gradient is a convention (straight-through),
  /// not the derivative of the forward function.
  virtual bool straight_through() const noexcept { return false; }

  /// Returns one buffer per input, each either empty (no contribution) or
  /// sized like that input.
  virtual std::vector<std::vector<T>> backward(std::span<const T> grad_output) = 0;

  bool needs_grad(std::size_t i) const;

  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
};

template <Real T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;  // empty until a backward pass reaches this leaf
  std::shared_ptr<Node<T>> grad_fn;
};

template <Real T>
bool Node<T>::needs_grad(std::size_t i) const {
  return inputs[i]->requires_grad;
}

}  // namespace detail

/// Dense row-major tensor that participates in reverse-mode autodiff.
///
/// Copies share storage (handle semantics, like a shared_ptr); use clone() for
/// an independent buffer. `Tensor` is the 32-bit working type; `TensorD` exists
/// for finite-difference oracles.
template <Real T>
class BasicTensor {
 public:
  using value_type = T;

  /// Undefined tensor; most accessors throw until assigned.
  BasicTensor() = default;

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const T> data() const;
  /// Writable view for in-place updates of leaves (optimizer steps, inputs).
  /// Throws on non-leaf tensors.
  std::span<T> mutable_data();
  T item() const;

  bool requires_grad() const;
  /// Leaves only.
  void set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();
  /// Gradient as a standalone tensor (zeros when no gradient was recorded).
  BasicTensor grad_tensor() const;

  /// Same values, new storage, no history, requires_grad off.
  BasicTensor detach() const;
  /// Deep copy as a leaf that keeps this tensor's requires_grad flag.
  BasicTensor clone() const;

  template <Real U>
  BasicTensor<U> cast() const {
    std::vector<U> out(numel());
    auto src = data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
    return BasicTensor<U>::from_data(shape(), std::move(out));
  }

  /// Reverse-mode pass from this scalar into every reachable requires_grad
  /// leaf. Leaf gradients accumulate across calls until zero_grad().
  void backward() const;

  /// Internal handle used by ops and the graph engine.
  const std::shared_ptr<detail::TensorImpl<T>>& impl() const;
  static BasicTensor wrap(std::shared_ptr<detail::TensorImpl<T>> impl);

 private:
  explicit BasicTensor(std::shared_ptr<detail::TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

template <Real T>
void backward(const BasicTensor<T>& loss) {
  loss.backward();
}

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

/// Process-wide count of completed backward passes.
std::uint64_t backward_pass_count() noexcept;

namespace detail {

void count_backward_pass() noexcept;

/// Builds an op result, attaching `make_node()` as grad_fn when recording is
/// enabled and any input requires a gradient.
template <Real T, typename MakeNode>
BasicTensor<T> make_result(Shape shape, std::vector<T> data,
                           std::initializer_list<const BasicTensor<T>*> inputs, MakeNode&& make_node) {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool track = false;
  if (grad_enabled()) {
    for (const auto* in : inputs) track = track || in->requires_grad();
  }
  if (track) {
    auto node = make_node();
    for (const auto* in : inputs) node->inputs.push_back(in->impl());
    impl->grad_fn = std::move(node);
    impl->requires_grad = true;
  }
  return BasicTensor<T>::wrap(std::move(impl));
}

}  // namespace detail

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace bitadapt
