#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "bitadapt/errors.hpp"
#include "bitadapt/grad_check.hpp"
#include "bitadapt/graph.hpp"
#include "bitadapt/ops.hpp"
#include "bitadapt/random.hpp"

using namespace bitadapt;

namespace {

std::vector<float> randv(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

// Direct-definition convolution in double.
std::vector<double> naive_conv(const std::vector<float>& x, const std::vector<float>& w, std::size_t n,
                               std::size_t c, std::size_t h, std::size_t wd, std::size_t o, std::size_t k,
                               std::size_t stride, std::size_t pad, std::size_t& oh, std::size_t& ow) {
  oh = (h + 2 * pad - k) / stride + 1;
  ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(n * o * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t f = 0; f < o; ++f)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double s = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t di = 0; di < k; ++di)
              for (std::size_t dj = 0; dj < k; ++dj) {
                const long yi = static_cast<long>(i * stride + di) - static_cast<long>(pad);
                const long xj = static_cast<long>(j * stride + dj) - static_cast<long>(pad);
                if (yi < 0 || xj < 0 || yi >= static_cast<long>(h) || xj >= static_cast<long>(wd)) continue;
                s += static_cast<double>(x[((b * c + ch) * h + yi) * wd + xj]) *
                     w[((f * c + ch) * k + di) * k + dj];
              }
          out[((b * o + f) * oh + i) * ow + j] = s;
        }
  return out;
}

}  // namespace

TEST(Tensor, ReluSignCases) {
  auto y = relu(Tensor::from_data({3}, {-1.f, 0.f, 2.f}));
  EXPECT_EQ(std::vector<float>(y.data().begin(), y.data().end()), (std::vector<float>{0.f, 0.f, 2.f}));
}

TEST(Tensor, ReluGradientAtZeroIsZero) {
  auto x = Tensor::from_data({3}, {-1.f, 0.f, 2.f}, true);
  sum(relu(x)).backward();
  EXPECT_EQ(x.grad()[0], 0.f);
  EXPECT_EQ(x.grad()[1], 0.f);
  EXPECT_EQ(x.grad()[2], 1.f);
}

TEST(Tensor, ClipGradientZeroAtEdges) {
  auto x = Tensor::from_data({4}, {-0.5f, 0.f, 0.5f, 1.f}, true);
  sum(clip(x, 0.f, 1.f)).backward();
  EXPECT_EQ(x.grad()[0], 0.f);
  EXPECT_EQ(x.grad()[1], 0.f);
  EXPECT_EQ(x.grad()[2], 1.f);
  EXPECT_EQ(x.grad()[3], 0.f);
}

TEST(Tensor, QuadraticGradient) {
  auto w = Tensor::from_data({3}, {1.f, 2.f, 3.f}, true);
  sum(mul(w, w)).backward();
  EXPECT_EQ(w.grad()[0], 2.f);
  EXPECT_EQ(w.grad()[1], 4.f);
  EXPECT_EQ(w.grad()[2], 6.f);
}

TEST(Tensor, MeanGradient) {
  auto x = Tensor::from_data({4}, {1.f, -2.f, 3.f, 7.f}, true);
  mean(x).backward();
  for (auto g : x.grad()) EXPECT_EQ(g, 0.25f);
}

TEST(Tensor, BackwardAccumulatesUntilZeroed) {
  auto w = Tensor::from_data({2}, {1.f, -1.f}, true);
  sum(mul(w, w)).backward();
  sum(mul(w, w)).backward();
  EXPECT_EQ(w.grad()[0], 4.f);
  EXPECT_EQ(w.grad()[1], -4.f);
  w.zero_grad();
  sum(w).backward();
  EXPECT_EQ(w.grad()[0], 1.f);
}

TEST(Tensor, BackwardOnNonScalarThrows) {
  auto x = Tensor::from_data({2}, {1.f, 2.f}, true);
  EXPECT_THROW(relu(x).backward(), Error);
}

TEST(Tensor, FanOutIsSumOfPaths) {
  Rng rng(3);
  auto v = randv(rng, 6);
  auto a = Tensor::from_data({6}, v, true);
  sum(add(tanh(a), mul(a, a))).backward();
  auto b = Tensor::from_data({6}, v, true);
  sum(tanh(b)).backward();
  auto c = Tensor::from_data({6}, v, true);
  sum(mul(c, c)).backward();
  for (std::size_t i = 0; i < 6; ++i) EXPECT_FLOAT_EQ(a.grad()[i], b.grad()[i] + c.grad()[i]);
}

TEST(Tensor, NoGradGuardRecordsNothing) {
  auto x = Tensor::from_data({2}, {1.f, 2.f}, true);
  NoGradGuard ng;
  auto y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.is_leaf());
}

TEST(Tensor, BackwardPassCounter) {
  auto x = Tensor::from_data({2}, {1.f, 2.f}, true);
  const auto before = backward_pass_count();
  sum(x).backward();
  sum(x).backward();
  EXPECT_EQ(backward_pass_count() - before, 2u);
}

TEST(Tensor, GraphIsTopological) {
  auto x = Tensor::from_data({2, 2}, {1.f, 2.f, 3.f, 4.f}, true);
  auto y = sum(relu(matmul(x, x)));
  Graph<float> g(y);
  const auto& e = g.entries();
  for (std::size_t i = 0; i < e.size(); ++i)
    for (auto in : e[i].inputs) EXPECT_LT(in, i);
  EXPECT_EQ(e.back().tensor, y.impl());
  EXPECT_EQ(g.op_count(), 3u);
}

TEST(Tensor, ShapeErrorNamesOpAndShapes) {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({3, 3});
  try {
    add(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3,3]"), std::string::npos) << msg;
  }
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Tensor, ConvAndPoolRejectEmptyOutput) {
  auto x = Tensor::zeros({1, 1, 2, 2});
  EXPECT_THROW(conv2d(x, Tensor::zeros({1, 1, 3, 3})), ShapeError);
  EXPECT_THROW(max_pool2d(x, 3, 3), ShapeError);
}

TEST(Tensor, MatmulMatchesNaive) {
  Rng rng(5);
  const std::size_t m = 7, k = 13, n = 5;
  auto av = randv(rng, m * k), bv = randv(rng, k * n);
  auto c = matmul(Tensor::from_data({m, k}, av), Tensor::from_data({k, n}, bv));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += static_cast<double>(av[i * k + t]) * bv[t * n + j];
      EXPECT_NEAR(c.data()[i * n + j], s, 1e-5);
    }
}

TEST(Tensor, ConvMatchesNaive) {
  Rng rng(6);
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 1}, {2, 0}, {1, 0}, {2, 1}}) {
    const std::size_t n = 2, c = 3, h = 7, w = 6, o = 4, k = 3;
    auto xv = randv(rng, n * c * h * w), wv = randv(rng, o * c * k * k);
    auto y = conv2d(Tensor::from_data({n, c, h, w}, xv), Tensor::from_data({o, c, k, k}, wv),
                    Conv2dOptions{stride, pad});
    std::size_t oh = 0, ow = 0;
    auto ref = naive_conv(xv, wv, n, c, h, w, o, k, stride, pad, oh, ow);
    ASSERT_EQ(y.shape(), (Shape{n, o, oh, ow}));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-5);
  }
}

TEST(Tensor, ConvGradientFiniteDifferences) {
  // 1x1x4x4 input, one 3x3 filter, eps 1e-3.
  Rng rng(9);
  std::vector<double> v(16 + 9);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  GradCheckOptions o;
  o.eps = 1e-3;
  o.tol = 1e-3;
  auto r = grad_check(
      [](const auto& p) {
        auto x = reshape(slice_rows(p, 0, 16), Shape{1, 1, 4, 4});
        auto w = reshape(slice_rows(p, 16, 9), Shape{1, 1, 3, 3});
        return conv2d(x, w, Conv2dOptions{1, 1});
      },
      TensorD::from_data({25}, v), o);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Tensor, TwoLayerNetGradientFiniteDifferences) {
  Rng rng(10);
  std::vector<double> v(4 * 3 + 3 * 2);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  GradCheckOptions o;
  o.eps = 1e-5;
  auto r = grad_check(
      [](const auto& p) {
        using T = typename std::decay_t<decltype(p)>::value_type;
        auto x = BasicTensor<T>::from_data({2, 4}, {T(0.3), T(-0.1), T(0.8), T(0.5), T(-0.6), T(0.2), T(0.9), T(-0.4)});
        auto w1 = reshape(slice_rows(p, 0, 12), Shape{4, 3});
        auto w2 = reshape(slice_rows(p, 12, 6), Shape{3, 2});
        return sum(matmul(relu(matmul(x, w1)), w2));
      },
      TensorD::from_data({18}, v), o);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Tensor, GradCheckSquare) {
  GradCheckOptions o;
  o.eps = 1e-4;
  auto r = grad_check([](const auto& x) { return mul(x, x); }, TensorD::from_data({1}, {3.0}), o);
  EXPECT_NEAR(r.analytic[0], 6.0, 1e-12);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Tensor, GradCheckSoftmaxCrossEntropy) {
  Rng rng(12);
  std::vector<double> v(5);
  for (auto& x : v) x = rng.uniform(-2.0, 2.0);
  GradCheckOptions o;
  o.eps = 1e-5;
  o.tol = 1e-4;
  auto r = grad_check(
      [](const auto& x) {
        static const std::vector<std::int64_t> y{3};
        return cross_entropy(x, std::span<const std::int64_t>(y));
      },
      TensorD::from_data({1, 5}, v), o);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
  EXPECT_FALSE(r.straight_through_present);
}

TEST(Tensor, SoftmaxSumsToOne) {
  Rng rng(13);
  auto v = randv(rng, 4 * 7, -30.0, 30.0);
  for (std::size_t axis : {0u, 1u}) {
    auto s = softmax(Tensor::from_data({4, 7}, v), axis);
    const std::size_t outer = axis == 0 ? 7 : 4, len = axis == 0 ? 4 : 7;
    for (std::size_t o = 0; o < outer; ++o) {
      double t = 0.0;
      for (std::size_t i = 0; i < len; ++i) t += axis == 0 ? s.data()[i * 7 + o] : s.data()[o * 7 + i];
      EXPECT_NEAR(t, 1.0, 1e-6);
    }
  }
}

TEST(Tensor, LogSoftmaxStableForLargeInputs) {
  auto l = log_softmax(Tensor::from_data({1, 2}, {1000.f, 0.f}), 1);
  EXPECT_NEAR(l.data()[0], 0.0, 1e-6);
  EXPECT_NEAR(l.data()[1], -1000.0, 1e-3);
}

TEST(Tensor, BatchNormChannelMeanFive) {
  Rng rng(14);
  const std::size_t n = 4, c = 2, hw = 9;
  std::vector<float> v(n * c * hw);
  for (auto& x : v) x = static_cast<float>(5.0 + rng.uniform(-1.0, 1.0));
  // shift each channel so its batch mean is exactly 5
  for (std::size_t ch = 0; ch < c; ++ch) {
    double m = 0.0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < hw; ++i) m += v[(b * c + ch) * hw + i];
    m /= n * hw;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < hw; ++i) v[(b * c + ch) * hw + i] += static_cast<float>(5.0 - m);
  }
  auto y = batch_norm_transductive(Tensor::from_data({n, c, 3, 3}, v), Tensor::full({c}, 1.f), Tensor::zeros({c}));
  for (std::size_t ch = 0; ch < c; ++ch) {
    double m = 0.0, s2 = 0.0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < hw; ++i) {
        const double z = y.data()[(b * c + ch) * hw + i];
        m += z;
        s2 += z * z;
      }
    m /= n * hw;
    EXPECT_NEAR(m, 0.0, 1e-5);
    EXPECT_NEAR(s2 / (n * hw) - m * m, 1.0, 1e-4);
  }
}

TEST(Tensor, BatchNormMatchesFormula) {
  Rng rng(15);
  auto v = randv(rng, 6 * 3, -3.0, 3.0);
  std::vector<float> g{1.5f, -0.5f, 2.f}, b{0.1f, 0.2f, -0.3f};
  auto y = batch_norm_transductive(Tensor::from_data({6, 3}, v), Tensor::from_data({3}, g), Tensor::from_data({3}, b));
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double m = 0.0, var = 0.0;
    for (std::size_t r = 0; r < 6; ++r) m += v[r * 3 + ch];
    m /= 6;
    for (std::size_t r = 0; r < 6; ++r) var += (v[r * 3 + ch] - m) * (v[r * 3 + ch] - m);
    var /= 6;
    for (std::size_t r = 0; r < 6; ++r)
      EXPECT_NEAR(y.data()[r * 3 + ch], g[ch] * (v[r * 3 + ch] - m) / std::sqrt(var + 1e-5) + b[ch], 1e-5);
  }
}

TEST(Tensor, MaxPoolMatchesNaive) {
  Rng rng(16);
  auto v = randv(rng, 2 * 3 * 5 * 4);
  auto y = max_pool2d(Tensor::from_data({2, 3, 5, 4}, v), 2, 2);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 2, 2}));
  for (std::size_t p = 0; p < 6; ++p)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        float m = -1e9f;
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) m = std::max(m, v[p * 20 + (2 * i + a) * 4 + 2 * j + b]);
        EXPECT_EQ(y.data()[p * 4 + i * 2 + j], m);
      }
}

TEST(Tensor, SquaredDistanceMatchesNaive) {
  Rng rng(17);
  auto av = randv(rng, 4 * 6), bv = randv(rng, 3 * 6);
  auto d = squared_euclidean_distance(Tensor::from_data({4, 6}, av), Tensor::from_data({3, 6}, bv));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < 6; ++t) s += (av[i * 6 + t] - bv[j * 6 + t]) * (av[i * 6 + t] - bv[j * 6 + t]);
      EXPECT_NEAR(d.data()[i * 3 + j], s, 1e-5);
    }
}

TEST(Tensor, ArgmaxTiesToLowestIndex) {
  auto a = argmax_rows(Tensor::from_data({2, 3}, {1.f, 3.f, 3.f, 2.f, 2.f, 2.f}));
  EXPECT_EQ(a, (std::vector<std::int64_t>{1, 0}));
}

TEST(Tensor, GroupMeanRejectsEmptyGroup) {
  std::vector<std::size_t> groups{0, 0};
  EXPECT_THROW(group_mean(Tensor::zeros({2, 2}), std::span<const std::size_t>(groups), 2), ShapeError);
}

TEST(Tensor, DeterministicRepeats) {
  auto run = [] {
    Rng rng(21);
    auto x = Tensor::from_data({3, 2, 6, 6}, randv(rng, 216), true);
    auto w = Tensor::from_data({4, 2, 3, 3}, randv(rng, 72), true);
    auto y = sum(relu(conv2d(x, w, Conv2dOptions{1, 1})));
    y.backward();
    std::vector<float> out(w.grad().begin(), w.grad().end());
    out.push_back(y.item());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Rng, SeededStreamsRepeatAndRestore) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.uniform01(), b.uniform01());
  const auto s = a.state();
  const double next = a.normal();
  Rng c(0);
  c.restore(s);
  EXPECT_EQ(c.normal(), next);
  for (int i = 0; i < 1000; ++i) {
    const auto k = a.uniform_index(7);
    EXPECT_LT(k, 7u);
  }
}
