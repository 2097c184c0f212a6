#include "bitadapt/tensor.hpp"

#include <atomic>
#include <sstream>

#include "bitadapt/errors.hpp"
#include "bitadapt/graph.hpp"

namespace bitadapt {

namespace {

thread_local bool t_grad_enabled = true;
std::atomic<std::uint64_t> g_backward_passes{0};

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() noexcept { return t_grad_enabled; }

std::uint64_t backward_pass_count() noexcept { return g_backward_passes.load(std::memory_order_relaxed); }

namespace detail {
void count_backward_pass() noexcept { g_backward_passes.fetch_add(1, std::memory_order_relaxed); }
}  // namespace detail

template <Real T>
BasicTensor<T> BasicTensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor", "zero-sized dimension in " + shape_to_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor", "shape " + shape_to_string(shape) + " needs " +
                                   std::to_string(shape_numel(shape)) + " values, got " +
                                   std::to_string(data.size()));
  }
  auto impl = std::make_shared<detail::TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return BasicTensor(std::move(impl));
}

template <Real T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T{0}, requires_grad);
}

template <Real T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <Real T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

template <Real T>
const std::shared_ptr<detail::TensorImpl<T>>& BasicTensor<T>::impl() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_;
}

template <Real T>
BasicTensor<T> BasicTensor<T>::wrap(std::shared_ptr<detail::TensorImpl<T>> impl) {
  return BasicTensor(std::move(impl));
}

template <Real T>
const Shape& BasicTensor<T>::shape() const {
  return impl()->shape;
}

template <Real T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("dim", "axis " + std::to_string(axis) + " out of range for " + shape_to_string(s));
  }
  return s[axis];
}

template <Real T>
std::size_t BasicTensor<T>::numel() const {
  return impl()->data.size();
}

template <Real T>
std::span<const T> BasicTensor<T>::data() const {
  return impl()->data;
}

template <Real T>
std::span<T> BasicTensor<T>::mutable_data() {
  if (impl()->grad_fn) throw Error("mutable_data() on a non-leaf tensor");
  return impl_->data;
}

template <Real T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item", "tensor " + shape_to_string(shape()) + " is not a scalar");
  return impl_->data[0];
}

template <Real T>
bool BasicTensor<T>::requires_grad() const {
  return impl()->requires_grad;
}

template <Real T>
void BasicTensor<T>::set_requires_grad(bool value) {
  if (impl()->grad_fn) throw Error("set_requires_grad() on a non-leaf tensor");
  impl_->requires_grad = value;
}

template <Real T>
bool BasicTensor<T>::is_leaf() const {
  return impl()->grad_fn == nullptr;
}

template <Real T>
bool BasicTensor<T>::has_grad() const {
  return !impl()->grad.empty();
}

template <Real T>
std::span<const T> BasicTensor<T>::grad() const {
  return impl()->grad;
}

template <Real T>
std::span<T> BasicTensor<T>::mutable_grad() {
  auto& g = impl()->grad;
  if (g.empty()) g.assign(impl_->data.size(), T{0});
  return g;
}

template <Real T>
void BasicTensor<T>::zero_grad() {
  impl()->grad.clear();
}

template <Real T>
BasicTensor<T> BasicTensor<T>::grad_tensor() const {
  const auto& g = impl()->grad;
  if (g.empty()) return zeros(impl_->shape);
  return from_data(impl_->shape, g);
}

template <Real T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return from_data(shape(), impl_->data);
}

template <Real T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return from_data(shape(), impl_->data, impl_->requires_grad);
}

template <Real T>
void BasicTensor<T>::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward", "loss must be a scalar, got " + shape_to_string(shape()));
  }
  Graph<T> graph(*this);
  graph.backward({T{1}});
  detail::count_backward_pass();
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace bitadapt
