#include "bitadapt/detail/gemm.hpp"

#include <algorithm>
#include <cmath>

namespace bitadapt::detail {

namespace {

template <Real T>
inline T madd(T a, T b, T acc) {
#if defined(__FMA__)
  return std::fma(a, b, acc);
#else
  return acc + a * b;
#endif
}

// Register tile: kRows rows of C by kCols columns, accumulated over all of k.
template <Real T>
struct Tile {
  static constexpr std::size_t kRows = 4;
  static constexpr std::size_t kCols = 128 / sizeof(T);
};

template <Real T>
void full_tile(std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  constexpr auto R = Tile<T>::kRows;
  constexpr auto C = Tile<T>::kCols;
  T acc[R][C] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n;
    for (std::size_t r = 0; r < R; ++r) {
      const T av = a[r * k + p];
      for (std::size_t j = 0; j < C; ++j) acc[r][j] = madd(av, brow[j], acc[r][j]);
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    T* crow = c + r * n;
    if (accumulate) {
      for (std::size_t j = 0; j < C; ++j) crow[j] += acc[r][j];
    } else {
      for (std::size_t j = 0; j < C; ++j) crow[j] = acc[r][j];
    }
  }
}

template <Real T>
void edge_tile(std::size_t rows, std::size_t cols, std::size_t n, std::size_t k, const T* a, const T* b,
               T* c, bool accumulate) {
  constexpr auto R = Tile<T>::kRows;
  constexpr auto C = Tile<T>::kCols;
  T acc[R][C] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n;
    for (std::size_t r = 0; r < rows; ++r) {
      const T av = a[r * k + p];
      for (std::size_t j = 0; j < cols; ++j) acc[r][j] = madd(av, brow[j], acc[r][j]);
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    T* crow = c + r * n;
    for (std::size_t j = 0; j < cols; ++j) crow[j] = accumulate ? crow[j] + acc[r][j] : acc[r][j];
  }
}

}  // namespace

template <Real T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  constexpr auto R = Tile<T>::kRows;
  constexpr auto C = Tile<T>::kCols;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T{0});
    return;
  }
  // Column strips outermost: one k x C strip of B stays cache-resident while
  // every row tile of A sweeps over it.
  for (std::size_t j = 0; j < n; j += C) {
    const std::size_t cols = std::min(C, n - j);
    for (std::size_t i = 0; i < m; i += R) {
      const std::size_t rows = std::min(R, m - i);
      if (rows == R && cols == C) {
        full_tile(n, k, a + i * k, b + j, c + i * n + j, accumulate);
      } else {
        edge_tile(rows, cols, n, k, a + i * k, b + j, c + i * n + j, accumulate);
      }
    }
  }
}

template <Real T>
std::vector<T> transpose(std::span<const T> src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  constexpr std::size_t block = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += block) {
    for (std::size_t j0 = 0; j0 < cols; j0 += block) {
      const auto i1 = std::min(rows, i0 + block);
      const auto j1 = std::min(cols, j0 + block);
      for (std::size_t i = i0; i < i1; ++i) {
        for (std::size_t j = j0; j < j1; ++j) out[j * rows + i] = src[i * cols + j];
      }
    }
  }
  return out;
}

template void gemm<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);
template std::vector<float> transpose<float>(std::span<const float>, std::size_t, std::size_t);
template std::vector<double> transpose<double>(std::span<const double>, std::size_t, std::size_t);

}  // namespace bitadapt::detail
