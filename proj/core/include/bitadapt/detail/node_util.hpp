#pragma once

#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "bitadapt/tensor.hpp"

namespace bitadapt::detail {

/// Node whose backward is a callable `(const Node<T>&, span<const T>) ->
/// vector<vector<T>>`. Saved forward values live in the callable's captures.
template <Real T, typename Fn>
class FnNode final : public Node<T> {
 public:
  FnNode(const char* name, Fn fn, bool straight_through)
      : name_(name), fn_(std::move(fn)), straight_through_(straight_through) {}

  const char* name() const noexcept override { return name_; }
  bool straight_through() const noexcept override { return straight_through_; }
  std::vector<std::vector<T>> backward(std::span<const T> grad_output) override {
    return fn_(static_cast<const Node<T>&>(*this), grad_output);
  }

 private:
  const char* name_;
  Fn fn_;
  bool straight_through_;
};

template <Real T, typename Fn>
std::shared_ptr<Node<T>> make_node(const char* name, Fn&& fn, bool straight_through = false) {
  return std::make_shared<FnNode<T, std::decay_t<Fn>>>(name, std::forward<Fn>(fn), straight_through);
}

}  // namespace bitadapt::detail
