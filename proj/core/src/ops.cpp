#include "bitadapt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bitadapt/detail/gemm.hpp"
#include "bitadapt/detail/node_util.hpp"
#include "bitadapt/errors.hpp"

namespace bitadapt {

using detail::make_node;
using detail::make_result;
using detail::Node;

namespace {

template <Real T>
using Grads = std::vector<std::vector<T>>;

std::string pair_shapes(const Shape& a, const Shape& b) {
  return "shape mismatch " + shape_to_string(a) + " vs " + shape_to_string(b);
}

template <Real T>
std::vector<T> copy_grad(std::span<const T> g) {
  return {g.begin(), g.end()};
}

}  // namespace

template <Real T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  auto da = a.data();
  auto db = b.data();
  if (sa == sb) {
    std::vector<T> out(da.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
    return make_result<T>(sa, std::move(out), {&a, &b}, [] {
      return make_node<T>("add", [](const Node<T>& node, std::span<const T> g) {
        Grads<T> r(2);
        if (node.needs_grad(0)) r[0] = copy_grad(g);
        if (node.needs_grad(1)) r[1] = copy_grad(g);
        return r;
      });
    });
  }
  if (sb.size() == 1 && !sa.empty() && sa.back() == sb[0]) {
    const std::size_t cols = sb[0];
    const std::size_t rows = da.size() / cols;
    std::vector<T> out(da.size());
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = da[r * cols + c] + db[c];
    }
    return make_result<T>(sa, std::move(out), {&a, &b}, [rows, cols] {
      return make_node<T>("add", [rows, cols](const Node<T>& node, std::span<const T> g) {
        Grads<T> r(2);
        if (node.needs_grad(0)) r[0] = copy_grad(g);
        if (node.needs_grad(1)) {
          std::vector<double> acc(cols, 0.0);
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t c = 0; c < cols; ++c) acc[c] += g[i * cols + c];
          }
          r[1].assign(acc.begin(), acc.end());
        }
        return r;
      });
    });
  }
  throw ShapeError("add", pair_shapes(sa, sb));
}

template <Real T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("sub", pair_shapes(a.shape(), b.shape()));
  auto da = a.data();
  auto db = b.data();
  std::vector<T> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [] {
    return make_node<T>("sub", [](const Node<T>& node, std::span<const T> g) {
      Grads<T> r(2);
      if (node.needs_grad(0)) r[0] = copy_grad(g);
      if (node.needs_grad(1)) {
        r[1].resize(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) r[1][i] = -g[i];
      }
      return r;
    });
  });
}

template <Real T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul", pair_shapes(a.shape(), b.shape()));
  auto da = a.data();
  auto db = b.data();
  std::vector<T> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [] {
    return make_node<T>("mul", [](const Node<T>& node, std::span<const T> g) {
      const auto& va = node.inputs[0]->data;
      const auto& vb = node.inputs[1]->data;
      Grads<T> r(2);
      if (node.needs_grad(0)) {
        r[0].resize(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) r[0][i] = g[i] * vb[i];
      }
      if (node.needs_grad(1)) {
        r[1].resize(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) r[1][i] = g[i] * va[i];
      }
      return r;
    });
  });
}

template <Real T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  auto dx = x.data();
  std::vector<T> out(dx.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] * factor;
  return make_result<T>(x.shape(), std::move(out), {&x}, [factor] {
    return make_node<T>("scale", [factor](const Node<T>&, std::span<const T> g) {
      Grads<T> r(1);
      r[0].resize(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) r[0][i] = g[i] * factor;
      return r;
    });
  });
}

template <Real T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T value) {
  auto dx = x.data();
  std::vector<T> out(dx.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] + value;
  return make_result<T>(x.shape(), std::move(out), {&x}, [] {
    return make_node<T>("add_scalar", [](const Node<T>&, std::span<const T> g) {
      Grads<T> r(1);
      r[0] = copy_grad(g);
      return r;
    });
  });
}

template <Real T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul", pair_shapes(a.shape(), b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  detail::gemm<T>(m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return make_result<T>({m, n}, std::move(out), {&a, &b}, [m, k, n] {
    return make_node<T>("matmul", [m, k, n](const Node<T>& node, std::span<const T> g) {
      Grads<T> r(2);
      if (node.needs_grad(0)) {
        auto bt = detail::transpose<T>(node.inputs[1]->data, k, n);
        r[0].resize(m * k);
        detail::gemm<T>(m, k, n, g.data(), bt.data(), r[0].data(), false);
      }
      if (node.needs_grad(1)) {
        auto at = detail::transpose<T>(node.inputs[0]->data, m, k);
        r[1].resize(k * n);
        detail::gemm<T>(k, n, m, at.data(), g.data(), r[1].data(), false);
      }
      return r;
    });
  });
}

template <Real T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  auto dx = x.data();
  std::vector<T> out(dx.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] > T{0} ? dx[i] : T{0};
  return make_result<T>(x.shape(), std::move(out), {&x}, [] {
    return make_node<T>("relu", [](const Node<T>& node, std::span<const T> g) {
      const auto& v = node.inputs[0]->data;
      Grads<T> r(1);
      r[0].resize(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) r[0][i] = v[i] > T{0} ? g[i] : T{0};
      return r;
    });
  });
}

template <Real T>
BasicTensor<T> tanh(const BasicTensor<T>& x) {
  auto dx = x.data();
  std::vector<T> out(dx.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(dx[i]);
  const bool track = grad_enabled() && x.requires_grad();
  std::vector<T> saved = track ? out : std::vector<T>{};
  return make_result<T>(x.shape(), std::move(out), {&x}, [&saved] {
    return make_node<T>("tanh", [y = std::move(saved)](const Node<T>&, std::span<const T> g) {
      Grads<T> r(1);
      r[0].resize(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) r[0][i] = g[i] * (T{1} - y[i] * y[i]);
      return r;
    });
  });
}

template <Real T>
BasicTensor<T> clip(const BasicTensor<T>& x, T lo, T hi) {
  if (!(lo < hi)) throw ShapeError("clip", "empty range");
  auto dx = x.data();
  std::vector<T> out(dx.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(dx[i], lo, hi);
  return make_result<T>(x.shape(), std::move(out), {&x}, [lo, hi] {
    return make_node<T>("clip", [lo, hi](const Node<T>& node, std::span<const T> g) {
      const auto& v = node.inputs[0]->data;
      Grads<T> r(1);
      r[0].resize(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) r[0][i] = (v[i] > lo && v[i] < hi) ? g[i] : T{0};
      return r;
    });
  });
}

template <Real T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  double acc = 0.0;
  for (auto v : x.data()) acc += v;
  const std::size_t n = x.numel();
  return make_result<T>({}, {static_cast<T>(acc)}, {&x}, [n] {
    return make_node<T>("sum", [n](const Node<T>&, std::span<const T> g) {
      return Grads<T>{std::vector<T>(n, g[0])};
    });
  });
}

template <Real T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  double acc = 0.0;
  for (auto v : x.data()) acc += v;
  const std::size_t n = x.numel();
  return make_result<T>({}, {static_cast<T>(acc / static_cast<double>(n))}, {&x}, [n] {
    return make_node<T>("mean", [n](const Node<T>&, std::span<const T> g) {
      return Grads<T>{std::vector<T>(n, static_cast<T>(static_cast<double>(g[0]) / static_cast<double>(n)))};
    });
  });
}

namespace {

struct AxisLayout {
  std::size_t outer = 1, length = 1, inner = 1;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(op, "axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

}  // namespace

template <Real T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis) {
  const auto l = axis_layout(x.shape(), axis, "softmax");
  auto dx = x.data();
  std::vector<T> out(dx.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.length * l.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < l.length; ++j) mx = std::max(mx, static_cast<double>(dx[base + j * l.inner]));
      double total = 0.0;
      for (std::size_t j = 0; j < l.length; ++j) total += std::exp(dx[base + j * l.inner] - mx);
      for (std::size_t j = 0; j < l.length; ++j) {
        out[base + j * l.inner] = static_cast<T>(std::exp(dx[base + j * l.inner] - mx) / total);
      }
    }
  }
  const bool track = grad_enabled() && x.requires_grad();
  std::vector<T> saved = track ? out : std::vector<T>{};
  return make_result<T>(x.shape(), std::move(out), {&x}, [&saved, l] {
    return make_node<T>("softmax", [y = std::move(saved), l](const Node<T>&, std::span<const T> g) {
      Grads<T> r(1);
      r[0].resize(g.size());
      for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t in = 0; in < l.inner; ++in) {
          const std::size_t base = o * l.length * l.inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < l.length; ++j) {
            const auto idx = base + j * l.inner;
            dot += static_cast<double>(g[idx]) * y[idx];
          }
          for (std::size_t j = 0; j < l.length; ++j) {
            const auto idx = base + j * l.inner;
            r[0][idx] = static_cast<T>(y[idx] * (g[idx] - dot));
          }
        }
      }
      return r;
    });
  });
}

template <Real T>
BasicTensor<T> log_softmax(const BasicTensor<T>& x, std::size_t axis) {
  const auto l = axis_layout(x.shape(), axis, "log_softmax");
  auto dx = x.data();
  std::vector<T> out(dx.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.length * l.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < l.length; ++j) mx = std::max(mx, static_cast<double>(dx[base + j * l.inner]));
      double total = 0.0;
      for (std::size_t j = 0; j < l.length; ++j) total += std::exp(dx[base + j * l.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t j = 0; j < l.length; ++j) {
        out[base + j * l.inner] = static_cast<T>(dx[base + j * l.inner] - lse);
      }
    }
  }
  const bool track = grad_enabled() && x.requires_grad();
  std::vector<T> saved = track ? out : std::vector<T>{};
  return make_result<T>(x.shape(), std::move(out), {&x}, [&saved, l] {
    return make_node<T>("log_softmax", [y = std::move(saved), l](const Node<T>&, std::span<const T> g) {
      Grads<T> r(1);
      r[0].resize(g.size());
      for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t in = 0; in < l.inner; ++in) {
          const std::size_t base = o * l.length * l.inner + in;
          double total = 0.0;
          for (std::size_t j = 0; j < l.length; ++j) total += g[base + j * l.inner];
          for (std::size_t j = 0; j < l.length; ++j) {
            const auto idx = base + j * l.inner;
            r[0][idx] = static_cast<T>(g[idx] - std::exp(static_cast<double>(y[idx])) * total);
          }
        }
      }
      return r;
    });
  });
}

template <Real T>
BasicTensor<T> batch_norm_transductive(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                                       const BasicTensor<T>& beta, double eps) {
  const auto& s = x.shape();
  if (s.size() != 2 && s.size() != 4) {
    throw ShapeError("batch_norm_transductive", "expected rank 2 or 4 input, got " + shape_to_string(s));
  }
  const std::size_t batch = s[0], channels = s[1];
  const std::size_t spatial = s.size() == 4 ? s[2] * s[3] : 1;
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
    throw ShapeError("batch_norm_transductive", "scale/shift " + shape_to_string(gamma.shape()) + "/" +
                                                    shape_to_string(beta.shape()) + " vs input " +
                                                    shape_to_string(s));
  }
  auto dx = x.data();
  auto dg = gamma.data();
  auto db = beta.data();
  const double count = static_cast<double>(batch * spatial);
  std::vector<T> xhat(dx.size());
  std::vector<double> inv_std(channels);
  std::vector<T> out(dx.size());
  for (std::size_t c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const T* p = dx.data() + (b * channels + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) acc += p[i];
    }
    const double mu = acc / count;
    double var = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const T* p = dx.data() + (b * channels + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        const double d = p[i] - mu;
        var += d * d;
      }
    }
    var /= count;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[c] = inv;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        const double h = (dx[off + i] - mu) * inv;
        xhat[off + i] = static_cast<T>(h);
        out[off + i] = static_cast<T>(dg[c] * h + db[c]);
      }
    }
  }
  return make_result<T>(s, std::move(out), {&x, &gamma, &beta}, [&] {
    return make_node<T>("batch_norm_transductive", [xh = std::move(xhat), inv = std::move(inv_std), batch, channels,
                                                    spatial, count](const Node<T>& node, std::span<const T> g) {
      const auto& gam = node.inputs[1]->data;
      Grads<T> r(3);
      std::vector<double> sum_g(channels, 0.0), sum_gx(channels, 0.0);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t off = (b * channels + c) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) {
            sum_g[c] += g[off + i];
            sum_gx[c] += static_cast<double>(g[off + i]) * xh[off + i];
          }
        }
      }
      if (node.needs_grad(0)) {
        r[0].resize(g.size());
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t off = (b * channels + c) * spatial;
            const double k = gam[c] * inv[c] / count;
            for (std::size_t i = 0; i < spatial; ++i) {
              r[0][off + i] = static_cast<T>(k * (count * g[off + i] - sum_g[c] - xh[off + i] * sum_gx[c]));
            }
          }
        }
      }
      if (node.needs_grad(1)) r[1].assign(sum_gx.begin(), sum_gx.end());
      if (node.needs_grad(2)) r[2].assign(sum_g.begin(), sum_g.end());
      return r;
    });
  });
}

template <Real T>
BasicTensor<T> squared_euclidean_distance(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("squared_euclidean_distance", pair_shapes(a.shape(), b.shape()));
  }
  const std::size_t p = a.dim(0), q = b.dim(0), d = a.dim(1);
  auto va = a.data();
  auto vb = b.data();
  std::vector<T> out(p * q);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < q; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = static_cast<double>(va[i * d + k]) - vb[j * d + k];
        acc += diff * diff;
      }
      out[i * q + j] = static_cast<T>(acc);
    }
  }
  return make_result<T>({p, q}, std::move(out), {&a, &b}, [p, q, d] {
    return make_node<T>("squared_euclidean_distance", [p, q, d](const Node<T>& node, std::span<const T> g) {
      const auto& va = node.inputs[0]->data;
      const auto& vb = node.inputs[1]->data;
      std::vector<double> ga(node.needs_grad(0) ? p * d : 0, 0.0);
      std::vector<double> gb(node.needs_grad(1) ? q * d : 0, 0.0);
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
          const double w = 2.0 * g[i * q + j];
          for (std::size_t k = 0; k < d; ++k) {
            const double diff = static_cast<double>(va[i * d + k]) - vb[j * d + k];
            if (!ga.empty()) ga[i * d + k] += w * diff;
            if (!gb.empty()) gb[j * d + k] -= w * diff;
          }
        }
      }
      Grads<T> r(2);
      r[0].assign(ga.begin(), ga.end());
      r[1].assign(gb.begin(), gb.end());
      return r;
    });
  });
}

template <Real T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape", "cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
  }
  auto dx = x.data();
  return make_result<T>(std::move(shape), std::vector<T>(dx.begin(), dx.end()), {&x}, [] {
    return make_node<T>("reshape", [](const Node<T>&, std::span<const T> g) { return Grads<T>{copy_grad(g)}; });
  });
}

template <Real T>
BasicTensor<T> flatten(const BasicTensor<T>& x) {
  if (x.rank() < 1) throw ShapeError("flatten", "scalar input");
  const std::size_t batch = x.dim(0);
  return reshape(x, {batch, x.numel() / batch});
}

template <Real T>
BasicTensor<T> slice_rows(const BasicTensor<T>& x, std::size_t begin, std::size_t count) {
  if (x.rank() < 1 || count == 0 || begin + count > x.dim(0)) {
    throw ShapeError("slice_rows", "rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                                       ") of " + shape_to_string(x.shape()));
  }
  const std::size_t row = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = count;
  auto dx = x.data();
  std::vector<T> out(dx.begin() + begin * row, dx.begin() + (begin + count) * row);
  const std::size_t total = x.numel();
  return make_result<T>(std::move(shape), std::move(out), {&x}, [=] {
    return make_node<T>("slice_rows", [=](const Node<T>&, std::span<const T> g) {
      std::vector<T> full(total, T{0});
      std::copy(g.begin(), g.end(), full.begin() + begin * row);
      return Grads<T>{std::move(full)};
    });
  });
}

template <Real T>
BasicTensor<T> group_mean(const BasicTensor<T>& x, std::span<const std::size_t> groups, std::size_t num_groups) {
  if (x.rank() != 2 || groups.size() != x.dim(0)) {
    throw ShapeError("group_mean", "input " + shape_to_string(x.shape()) + " with " +
                                       std::to_string(groups.size()) + " group ids");
  }
  const std::size_t rows = x.dim(0), d = x.dim(1);
  std::vector<std::size_t> counts(num_groups, 0);
  for (auto g : groups) {
    if (g >= num_groups) throw ShapeError("group_mean", "group id " + std::to_string(g) + " out of range");
    ++counts[g];
  }
  for (std::size_t g = 0; g < num_groups; ++g) {
    if (counts[g] == 0) throw ShapeError("group_mean", "group " + std::to_string(g) + " is empty");
  }
  auto dx = x.data();
  std::vector<double> acc(num_groups * d, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < d; ++k) acc[groups[r] * d + k] += dx[r * d + k];
  }
  std::vector<T> out(num_groups * d);
  for (std::size_t g = 0; g < num_groups; ++g) {
    for (std::size_t k = 0; k < d; ++k) out[g * d + k] = static_cast<T>(acc[g * d + k] / counts[g]);
  }
  std::vector<std::size_t> ids(groups.begin(), groups.end());
  return make_result<T>({num_groups, d}, std::move(out), {&x}, [&] {
    return make_node<T>("group_mean", [ids = std::move(ids), counts, rows, d](const Node<T>&, std::span<const T> g) {
      std::vector<T> gx(rows * d);
      for (std::size_t r = 0; r < rows; ++r) {
        const double inv = 1.0 / static_cast<double>(counts[ids[r]]);
        for (std::size_t k = 0; k < d; ++k) gx[r * d + k] = static_cast<T>(g[ids[r] * d + k] * inv);
      }
      return Grads<T>{std::move(gx)};
    });
  });
}

template <Real T>
BasicTensor<T> nll_loss(const BasicTensor<T>& log_probs, std::span<const std::int64_t> labels, Reduction reduction) {
  if (log_probs.rank() != 2 || labels.size() != log_probs.dim(0)) {
    throw ShapeError("nll_loss", "log-probabilities " + shape_to_string(log_probs.shape()) + " with " +
                                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t rows = log_probs.dim(0), classes = log_probs.dim(1);
  auto lp = log_probs.data();
  double acc = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes) {
      throw ShapeError("nll_loss", "label " + std::to_string(labels[r]) + " outside [0, " +
                                       std::to_string(classes) + ")");
    }
    acc -= lp[r * classes + static_cast<std::size_t>(labels[r])];
  }
  const double divisor = reduction == Reduction::mean ? static_cast<double>(rows) : 1.0;
  std::vector<std::int64_t> ys(labels.begin(), labels.end());
  return make_result<T>({}, {static_cast<T>(acc / divisor)}, {&log_probs}, [&] {
    return make_node<T>("nll_loss", [ys = std::move(ys), rows, classes, divisor](const Node<T>&,
                                                                                 std::span<const T> g) {
      std::vector<T> gx(rows * classes, T{0});
      const T v = static_cast<T>(-static_cast<double>(g[0]) / divisor);
      for (std::size_t r = 0; r < rows; ++r) gx[r * classes + static_cast<std::size_t>(ys[r])] = v;
      return Grads<T>{std::move(gx)};
    });
  });
}

template <Real T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::int64_t> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy", "expected (batch, classes), got " +
                                                                shape_to_string(logits.shape()));
  return nll_loss(log_softmax(logits, 1), labels, Reduction::mean);
}

template <Real T>
std::vector<std::int64_t> argmax_rows(const BasicTensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("argmax_rows", "expected rank 2, got " + shape_to_string(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  auto d = x.data();
  std::vector<std::int64_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (d[r * cols + c] > d[r * cols + best]) best = c;
    }
    out[r] = static_cast<std::int64_t>(best);
  }
  return out;
}

#define BITADAPT_INSTANTIATE_OPS(T)                                                                             \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                    \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                               \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                               \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                        \
  template BasicTensor<T> tanh(const BasicTensor<T>&);                                                        \
  template BasicTensor<T> clip(const BasicTensor<T>&, T, T);                                                  \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                         \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                                        \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::size_t);                                        \
  template BasicTensor<T> log_softmax(const BasicTensor<T>&, std::size_t);                                    \
  template BasicTensor<T> batch_norm_transductive(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                                  const BasicTensor<T>&, double);                             \
  template BasicTensor<T> squared_euclidean_distance(const BasicTensor<T>&, const BasicTensor<T>&);           \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                              \
  template BasicTensor<T> flatten(const BasicTensor<T>&);                                                     \
  template BasicTensor<T> slice_rows(const BasicTensor<T>&, std::size_t, std::size_t);                        \
  template BasicTensor<T> group_mean(const BasicTensor<T>&, std::span<const std::size_t>, std::size_t);       \
  template BasicTensor<T> nll_loss(const BasicTensor<T>&, std::span<const std::int64_t>, Reduction);          \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&, std::span<const std::int64_t>);                \
  template std::vector<std::int64_t> argmax_rows(const BasicTensor<T>&);

BITADAPT_INSTANTIATE_OPS(float)
BITADAPT_INSTANTIATE_OPS(double)

#undef BITADAPT_INSTANTIATE_OPS

}  // namespace bitadapt
