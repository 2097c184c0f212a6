#include "bitadapt/graph.hpp"

#include <unordered_map>
#include <utility>

#include "bitadapt/errors.hpp"

namespace bitadapt {

template <Real T>
Graph<T>::Graph(const BasicTensor<T>& root) {
  using Impl = detail::TensorImpl<T>;
  std::unordered_map<const Impl*, std::size_t> position;

  // Iterative post-order DFS: an entry is emitted only after all its inputs.
  struct Frame {
    std::shared_ptr<Impl> impl;
    std::size_t next_input;
  };
  std::vector<Frame> stack;
  std::unordered_map<const Impl*, bool> on_stack;
  stack.push_back({root.impl(), 0});
  on_stack[root.impl().get()] = true;

  while (!stack.empty()) {
    auto& top = stack.back();
    const auto& fn = top.impl->grad_fn;
    if (fn && top.next_input < fn->inputs.size()) {
      auto child = fn->inputs[top.next_input++];
      if (!position.contains(child.get()) && !on_stack[child.get()]) {
        on_stack[child.get()] = true;
        stack.push_back({std::move(child), 0});
      }
      continue;
    }
    Entry entry;
    entry.tensor = top.impl;
    entry.op = fn ? fn->name() : "leaf";
    if (fn) {
      for (const auto& in : fn->inputs) entry.inputs.push_back(position.at(in.get()));
    }
    position[top.impl.get()] = entries_.size();
    entries_.push_back(std::move(entry));
    stack.pop_back();
  }
}

template <Real T>
std::size_t Graph<T>::op_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor->grad_fn ? 1 : 0;
  return n;
}

template <Real T>
bool Graph<T>::contains_straight_through() const noexcept {
  for (const auto& e : entries_) {
    if (e.tensor->grad_fn && e.tensor->grad_fn->straight_through()) return true;
  }
  return false;
}

template <Real T>
std::size_t Graph<T>::backward(std::vector<T> seed) const {
  if (entries_.empty()) return 0;
  const auto& root = entries_.back().tensor;
  if (seed.size() != root->data.size()) {
    throw ShapeError("backward", "seed has " + std::to_string(seed.size()) + " values for root " +
                                     shape_to_string(root->shape));
  }

  std::vector<std::vector<T>> pending(entries_.size());
  pending.back() = std::move(seed);

  auto accumulate = [](std::vector<T>& dst, const std::vector<T>& src) {
    if (dst.empty()) {
      dst = src;
      return;
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  };

  if (!root->grad_fn) {
    // Loss is itself a leaf.
    if (root->requires_grad) accumulate(root->grad, pending.back());
    return 0;
  }

  std::size_t visited = 0;
  for (std::size_t idx = entries_.size(); idx-- > 0;) {
    const auto& entry = entries_[idx];
    auto& fn = entry.tensor->grad_fn;
    if (!fn || pending[idx].empty()) continue;
    auto input_grads = fn->backward(pending[idx]);
    ++visited;
    pending[idx].clear();
    pending[idx].shrink_to_fit();
    for (std::size_t i = 0; i < entry.inputs.size(); ++i) {
      if (i >= input_grads.size() || input_grads[i].empty()) continue;
      const auto& input = entries_[entry.inputs[i]].tensor;
      if (!input->requires_grad) continue;
      if (input->grad_fn) {
        accumulate(pending[entry.inputs[i]], input_grads[i]);
      } else {
        accumulate(input->grad, input_grads[i]);
      }
    }
  }
  return visited;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace bitadapt
