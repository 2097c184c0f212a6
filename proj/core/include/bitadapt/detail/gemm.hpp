#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bitadapt/tensor.hpp"

namespace bitadapt::detail {

/// C (m x n) = A (m x k) * B (k x n), row-major and densely packed.
/// With `accumulate`, the product is added to the existing C instead.
/// Every output element sums over k in increasing order, so results do not
/// depend on blocking.
template <Real T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

/// Row-major transpose of a (rows x cols) matrix.
template <Real T>
std::vector<T> transpose(std::span<const T> src, std::size_t rows, std::size_t cols);

}  // namespace bitadapt::detail
