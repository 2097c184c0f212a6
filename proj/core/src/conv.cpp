#include <algorithm>
#include <limits>

#include "bitadapt/detail/gemm.hpp"
#include "bitadapt/detail/node_util.hpp"
#include "bitadapt/errors.hpp"
#include "bitadapt/ops.hpp"

namespace bitadapt {

namespace {

struct ConvGeom {
  std::size_t batch, in_ch, h, w;
  std::size_t out_ch, kh, kw;
  std::size_t stride, pad;
  std::size_t oh, ow;

  std::size_t patch() const { return in_ch * kh * kw; }
  std::size_t plane() const { return oh * ow; }
  // Samples per GEMM: enough columns to keep the kernel busy on tiny planes,
  // bounded so the unfolded buffer stays modest.
  std::size_t chunk() const { return std::clamp<std::size_t>(4096 / std::max<std::size_t>(plane(), 1), 1, batch); }
};

template <Real T>
void im2col(const ConvGeom& g, const T* x, std::size_t first, std::size_t count, T* col) {
  const std::size_t cols = count * g.plane();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * cols;
        for (std::size_t s = 0; s < count; ++s) {
          const T* src = x + ((first + s) * g.in_ch + c) * g.h * g.w;
          T* dst = row + s * g.plane();
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const std::ptrdiff_t xx =
                  static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
              const bool inside = y >= 0 && y < static_cast<std::ptrdiff_t>(g.h) && xx >= 0 &&
                                  xx < static_cast<std::ptrdiff_t>(g.w);
              dst[oy * g.ow + ox] = inside ? src[static_cast<std::size_t>(y) * g.w + static_cast<std::size_t>(xx)] : T{0};
            }
          }
        }
      }
    }
  }
}

template <Real T>
void col2im(const ConvGeom& g, const T* col, std::size_t first, std::size_t count, T* dx) {
  const std::size_t cols = count * g.plane();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * cols;
        for (std::size_t s = 0; s < count; ++s) {
          T* dst = dx + ((first + s) * g.in_ch + c) * g.h * g.w;
          const T* src = row + s * g.plane();
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
            if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const std::ptrdiff_t xx =
                  static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.w)) continue;
              dst[static_cast<std::size_t>(y) * g.w + static_cast<std::size_t>(xx)] += src[oy * g.ow + ox];
            }
          }
        }
      }
    }
  }
}

template <Real T>
void conv_backward(const ConvGeom& g, const std::vector<T>& x, const std::vector<T>& w, std::span<const T> gout,
                   std::vector<T>* dx, std::vector<T>* dw) {
  const std::size_t step = g.chunk();
  const std::size_t P = g.patch(), L = g.plane();
  std::vector<T> wt;
  if (dx) {
    dx->assign(x.size(), T{0});
    wt = detail::transpose<T>(w, g.out_ch, P);
  }
  if (dw) dw->assign(w.size(), T{0});
  std::vector<T> col, gpacked, dcol;
  for (std::size_t first = 0; first < g.batch; first += step) {
    const std::size_t count = std::min(step, g.batch - first);
    const std::size_t n = count * L;
    gpacked.resize(g.out_ch * n);
    for (std::size_t s = 0; s < count; ++s) {
      for (std::size_t o = 0; o < g.out_ch; ++o) {
        const T* src = gout.data() + ((first + s) * g.out_ch + o) * L;
        std::copy(src, src + L, gpacked.begin() + o * n + s * L);
      }
    }
    if (dw) {
      col.resize(P * n);
      im2col(g, x.data(), first, count, col.data());
      auto colt = detail::transpose<T>(col, P, n);
      detail::gemm<T>(g.out_ch, P, n, gpacked.data(), colt.data(), dw->data(), true);
    }
    if (dx) {
      dcol.resize(P * n);
      detail::gemm<T>(P, n, g.out_ch, wt.data(), gpacked.data(), dcol.data(), false);
      col2im(g, dcol.data(), first, count, dx->data());
    }
  }
}

}  // namespace

template <Real T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, Conv2dOptions options) {
  if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d", "input " + shape_to_string(x.shape()) + " vs weight " +
                                   shape_to_string(weight.shape()));
  }
  if (options.stride == 0) throw ShapeError("conv2d", "stride must be positive");
  ConvGeom g{};
  g.batch = x.dim(0);
  g.in_ch = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.out_ch = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = options.stride;
  g.pad = options.padding;
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
    throw ShapeError("conv2d", "kernel " + shape_to_string(weight.shape()) + " larger than padded input " +
                                   shape_to_string(x.shape()));
  }
  g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

  const std::size_t P = g.patch(), L = g.plane(), step = g.chunk();
  std::vector<T> out(g.batch * g.out_ch * L);
  std::vector<T> col, packed;
  auto xd = x.data();
  auto wd = weight.data();
  for (std::size_t first = 0; first < g.batch; first += step) {
    const std::size_t count = std::min(step, g.batch - first);
    const std::size_t n = count * L;
    col.resize(P * n);
    packed.resize(g.out_ch * n);
    im2col(g, xd.data(), first, count, col.data());
    detail::gemm<T>(g.out_ch, n, P, wd.data(), col.data(), packed.data(), false);
    for (std::size_t s = 0; s < count; ++s) {
      for (std::size_t o = 0; o < g.out_ch; ++o) {
        const T* src = packed.data() + o * n + s * L;
        std::copy(src, src + L, out.begin() + ((first + s) * g.out_ch + o) * L);
      }
    }
  }
  return detail::make_result<T>({g.batch, g.out_ch, g.oh, g.ow}, std::move(out), {&x, &weight}, [g] {
    return detail::make_node<T>("conv2d", [g](const detail::Node<T>& node, std::span<const T> grad) {
      std::vector<std::vector<T>> r(2);
      conv_backward<T>(g, node.inputs[0]->data, node.inputs[1]->data, grad, node.needs_grad(0) ? &r[0] : nullptr,
                       node.needs_grad(1) ? &r[1] : nullptr);
      return r;
    });
  });
}

template <Real T>
BasicTensor<T> max_pool2d(const BasicTensor<T>& x, std::size_t kernel, std::size_t stride) {
  if (x.rank() != 4) throw ShapeError("max_pool2d", "expected rank 4, got " + shape_to_string(x.shape()));
  if (kernel == 0 || stride == 0) throw ShapeError("max_pool2d", "kernel and stride must be positive");
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < kernel || w < kernel) {
    throw ShapeError("max_pool2d", "window " + std::to_string(kernel) + " larger than input " +
                                       shape_to_string(x.shape()));
  }
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  auto xd = x.data();
  std::vector<T> out(b * c * oh * ow);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t plane = 0; plane < b * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + oy * stride * w + ox * stride;
        for (std::size_t i = 0; i < kernel; ++i) {
          for (std::size_t j = 0; j < kernel; ++j) {
            const std::size_t idx = base + (oy * stride + i) * w + ox * stride + j;
            if (xd[idx] > xd[best]) best = idx;
          }
        }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        out[o] = xd[best];
        arg[o] = best;
      }
    }
  }
  const std::size_t total = x.numel();
  return detail::make_result<T>({b, c, oh, ow}, std::move(out), {&x}, [&arg, total] {
    return detail::make_node<T>("max_pool2d", [arg = std::move(arg), total](const detail::Node<T>&,
                                                                            std::span<const T> grad) {
      std::vector<T> gx(total, T{0});
      for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += grad[o];
      return std::vector<std::vector<T>>{std::move(gx)};
    });
  });
}

template BasicTensor<float> conv2d(const BasicTensor<float>&, const BasicTensor<float>&, Conv2dOptions);
template BasicTensor<double> conv2d(const BasicTensor<double>&, const BasicTensor<double>&, Conv2dOptions);
template BasicTensor<float> max_pool2d(const BasicTensor<float>&, std::size_t, std::size_t);
template BasicTensor<double> max_pool2d(const BasicTensor<double>&, std::size_t, std::size_t);

}  // namespace bitadapt
