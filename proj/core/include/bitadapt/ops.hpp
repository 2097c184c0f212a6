#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bitadapt/tensor.hpp"

// Differentiable primitives. Every op validates shapes and throws ShapeError
// naming itself and the offending shapes. Reductions accumulate in double.
namespace bitadapt {

/// Elementwise a + b. `b` may also be a rank-1 bias matching a's last dim.
template <Real T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <Real T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Elementwise product.
template <Real T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <Real T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor);

template <Real T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T value);

/// (m, k) x (k, n) -> (m, n).
template <Real T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// x: (batch, in_ch, h, w), weight: (out_ch, in_ch, kh, kw), zero padding.
template <Real T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, Conv2dOptions options = {});

/// Window max over (h, w); gradient goes to the first maximum in scan order.
template <Real T>
BasicTensor<T> max_pool2d(const BasicTensor<T>& x, std::size_t kernel, std::size_t stride);

/// relu'(0) = 0.
template <Real T>
BasicTensor<T> relu(const BasicTensor<T>& x);

template <Real T>
BasicTensor<T> tanh(const BasicTensor<T>& x);

/// Gradient 1 strictly inside (lo, hi), 0 at and beyond the edges.
template <Real T>
BasicTensor<T> clip(const BasicTensor<T>& x, T lo, T hi);

template <Real T>
BasicTensor<T> sum(const BasicTensor<T>& x);

template <Real T>
BasicTensor<T> mean(const BasicTensor<T>& x);

template <Real T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis);

template <Real T>
BasicTensor<T> log_softmax(const BasicTensor<T>& x, std::size_t axis);

/// Normalizes each channel (axis 1) of a rank-2 or rank-4 input with the
/// statistics of the current batch, in training and evaluation alike, then
/// applies gamma/beta. Biased variance.
template <Real T>
BasicTensor<T> batch_norm_transductive(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                                       const BasicTensor<T>& beta, double eps = 1e-5);

/// a: (p, d), b: (q, d) -> (p, q) with entry ||a_i - b_j||^2.
template <Real T>
BasicTensor<T> squared_euclidean_distance(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <Real T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

/// (batch, ...) -> (batch, prod(...)).
template <Real T>
BasicTensor<T> flatten(const BasicTensor<T>& x);

/// Rows [begin, begin + count) along axis 0.
template <Real T>
BasicTensor<T> slice_rows(const BasicTensor<T>& x, std::size_t begin, std::size_t count);

/// Mean of the rows of x (r, d) sharing a group id -> (num_groups, d).
/// Every group must be non-empty.
template <Real T>
BasicTensor<T> group_mean(const BasicTensor<T>& x, std::span<const std::size_t> groups, std::size_t num_groups);

enum class Reduction { mean, sum };

/// Negative log-likelihood of `labels` under row-wise log-probabilities.
template <Real T>
BasicTensor<T> nll_loss(const BasicTensor<T>& log_probs, std::span<const std::int64_t> labels,
                        Reduction reduction = Reduction::mean);

/// Mean cross-entropy of (batch, classes) logits.
template <Real T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::int64_t> labels);

/// Row-wise argmax, ties to the lowest index.
template <Real T>
std::vector<std::int64_t> argmax_rows(const BasicTensor<T>& x);

}  // namespace bitadapt
