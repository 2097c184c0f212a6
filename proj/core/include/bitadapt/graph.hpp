#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "bitadapt/tensor.hpp"

namespace bitadapt {

/// Topologically ordered view of the ops that produced a tensor.
///
/// Leaves and op results both appear as entries; every entry's inputs precede
/// it, and the root is last. Backward walks the entries once in reverse.
template <Real T>
class Graph {
 public:
  struct Entry {
    std::shared_ptr<detail::TensorImpl<T>> tensor;
    std::string op;  // "leaf" for tensors without a recorded op
    std::vector<std::size_t> inputs;
  };

  explicit Graph(const BasicTensor<T>& root);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t op_count() const noexcept;
  bool contains_straight_through() const noexcept;

  /// Propagates `seed` (sized like the root) backward. Returns the number of
  /// op nodes whose backward ran.
  std::size_t backward(std::vector<T> seed) const;

 private:
  std::vector<Entry> entries_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace bitadapt
