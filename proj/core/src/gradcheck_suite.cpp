#include "bitadapt/gradcheck_suite.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>

#include "bitadapt/meta.hpp"
#include "bitadapt/models.hpp"
#include "bitadapt/quant.hpp"

namespace bitadapt {

namespace {

// Double-precision central differences. Primitives are smooth on the sampled
// inputs; the toy models have many relu/max-pool kinks, hence the smaller step.
constexpr double kEps = 1e-5;
constexpr double kModelEps = 1e-6;
constexpr double kTol = 1e-3;

struct Case {
  std::string name;
  bool excluded;
  std::function<GradCheckReport(std::uint64_t)> run;
};

// Values in [lo, hi], nudged at least `gap` away from zero.
TensorD random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, double gap = 0.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    x = rng.uniform(lo, hi);
    if (gap > 0.0 && std::abs(x) < gap) x = x < 0 ? x - gap : x + gap;
  }
  return TensorD::from_data(std::move(shape), std::move(v));
}

GradCheckOptions opts(std::uint64_t seed, double eps = kEps, std::size_t max_coords = 0) {
  GradCheckOptions o;
  o.eps = eps;
  o.tol = kTol;
  o.floor = 1e-4;
  o.max_coords = max_coords;
  o.seed = seed;
  return o;
}

// Concatenates two tensors as one flat point; `split` recovers them inside f.
TensorD pack(const TensorD& a, const TensorD& b) {
  std::vector<double> v(a.data().begin(), a.data().end());
  v.insert(v.end(), b.data().begin(), b.data().end());
  const Shape shape{v.size()};
  return TensorD::from_data(shape, std::move(v));
}

template <Real T>
std::pair<BasicTensor<T>, BasicTensor<T>> split(const BasicTensor<T>& flat, const Shape& sa, const Shape& sb) {
  const auto na = shape_numel(sa), nb = shape_numel(sb);
  return {reshape(slice_rows(flat, 0, na), sa), reshape(slice_rows(flat, na, nb), sb)};
}

template <typename F>
Case binary(std::string name, Shape sa, Shape sb, F f, double gap = 0.0) {
  return {std::move(name), false, [=](std::uint64_t seed) {
            Rng rng(seed);
            auto a = random_tensor(rng, sa, -1.0, 1.0, gap);
            auto b = random_tensor(rng, sb, -1.0, 1.0, gap);
            return grad_check(
                [&]<Real T>(const BasicTensor<T>& p) {
                  auto [x, y] = split(p, sa, sb);
                  return f(x, y);
                },
                pack(a, b), opts(seed));
          }};
}

template <typename F>
Case unary(std::string name, Shape s, F f, double lo = -1.0, double hi = 1.0, double gap = 0.0, bool excluded = false) {
  return {std::move(name), excluded, [=](std::uint64_t seed) {
            Rng rng(seed);
            return grad_check(f, random_tensor(rng, s, lo, hi, gap), opts(seed));
          }};
}

// Loss of a toy model as a function of all its parameters, flattened in
// declaration order.
struct ToyModel {
  ModelSpec spec;
  TensorD flat;

  ToyModel(ModelKind kind, std::size_t width, Shape input, std::uint64_t seed) {
    spec = build_model(kind, width, std::move(input));
    Rng rng(seed);
    auto params = init_params(spec, rng);
    std::vector<double> v;
    for (const auto& info : spec.parameters()) {
      for (auto x : params.at(info.name).data()) v.push_back(x);
    }
    // Move BN affine terms off their 1 / 0 init so their gradients are generic.
    std::size_t off = 0;
    for (const auto& info : spec.parameters()) {
      const auto n = shape_numel(info.shape);
      if (info.batch_norm) {
        for (std::size_t i = 0; i < n; ++i) v[off + i] += rng.uniform(-0.3, 0.3);
      }
      off += n;
    }
    const Shape shape{v.size()};
    flat = TensorD::from_data(shape, std::move(v));
  }

  template <Real T>
  BasicParams<T> unflatten(const BasicTensor<T>& p) const {
    BasicParams<T> out;
    std::size_t off = 0;
    for (const auto& info : spec.parameters()) {
      const auto n = shape_numel(info.shape);
      out.emplace(info.name, reshape(slice_rows(p, off, n), info.shape));
      off += n;
    }
    return out;
  }
};

Case classifier_case(std::string name, ModelKind kind, std::size_t classes, BitwidthTask task, bool bypass,
                     bool excluded) {
  return {std::move(name), excluded, [=](std::uint64_t seed) {
            ToyModel m(kind, classes, Shape{1, 8, 8}, seed);
            Rng rng(mix_seed(seed, 5));
            const std::size_t batch = 4;
            auto x = random_tensor(rng, Shape{batch, 1, 8, 8}, 0.0, 1.0);
            std::vector<std::int64_t> y(batch);
            for (std::size_t i = 0; i < batch; ++i) y[i] = static_cast<std::int64_t>(i % classes);
            auto f = [&]<Real T>(const BasicTensor<T>& p) {
              auto params = m.unflatten(p);
              auto logits = forward_quantized(m.spec, params, x.template cast<T>(), task);
              return cross_entropy(logits, std::span<const std::int64_t>(y));
            };
            if (bypass) {
              RoundingBypass rb;
              return grad_check(f, m.flat, opts(seed, kModelEps, 24));
            }
            return grad_check(f, m.flat, opts(seed, kModelEps, 24));
          }};
}

Case prototype_case() {
  return {"model/conv4-pn/fp", false, [](std::uint64_t seed) {
            ToyModel m(ModelKind::conv4_pn, 4, Shape{1, 8, 8}, seed);
            Rng rng(mix_seed(seed, 7));
            const std::size_t ways = 2, shots = 2, queries = 2;
            auto x = random_tensor(rng, Shape{ways * (shots + queries), 1, 8, 8}, 0.0, 1.0);
            std::vector<std::int64_t> sy, qy;
            for (std::size_t c = 0; c < ways; ++c) {
              for (std::size_t k = 0; k < shots; ++k) sy.push_back(static_cast<std::int64_t>(c));
            }
            for (std::size_t c = 0; c < ways; ++c) {
              for (std::size_t k = 0; k < queries; ++k) qy.push_back(static_cast<std::int64_t>(c));
            }
            auto f = [&]<Real T>(const BasicTensor<T>& p) {
              auto params = m.unflatten(p);
              auto emb = forward(m.spec, params, x.template cast<T>());
              auto s = slice_rows(emb, 0, ways * shots);
              auto q = slice_rows(emb, ways * shots, ways * queries);
              auto protos = compute_prototypes(s, std::span<const std::int64_t>(sy), ways, shots);
              return pn_episode_loss(q, std::span<const std::int64_t>(qy), protos, shots);
            };
            return grad_check(f, m.flat, opts(seed, kModelEps, 24));
          }};
}

std::vector<Case> all_cases() {
  std::vector<Case> c;
  c.push_back(binary("add", Shape{3, 4}, Shape{3, 4}, [](auto a, auto b) { return add(a, b); }));
  c.push_back(binary("add/bias", Shape{3, 4}, Shape{4}, [](auto a, auto b) { return add(a, b); }));
  c.push_back(binary("sub", Shape{3, 4}, Shape{3, 4}, [](auto a, auto b) { return sub(a, b); }));
  c.push_back(binary("mul", Shape{3, 4}, Shape{3, 4}, [](auto a, auto b) { return mul(a, b); }));
  c.push_back(unary("scale", Shape{5}, [](const auto& x) { return scale(x, 2.5); }));
  c.push_back(unary("add_scalar", Shape{5}, [](const auto& x) { return add_scalar(x, 0.75); }));
  c.push_back(binary("matmul", Shape{3, 5}, Shape{5, 4}, [](auto a, auto b) { return matmul(a, b); }));
  c.push_back(binary("conv2d/pad1", Shape{2, 2, 5, 5}, Shape{3, 2, 3, 3},
                     [](auto x, auto w) { return conv2d(x, w, Conv2dOptions{1, 1}); }));
  c.push_back(binary("conv2d/stride2", Shape{2, 2, 6, 6}, Shape{3, 2, 3, 3},
                     [](auto x, auto w) { return conv2d(x, w, Conv2dOptions{2, 0}); }));
  c.push_back(unary("max_pool2d", Shape{2, 2, 4, 4}, [](const auto& x) { return max_pool2d(x, 2, 2); }));
  c.push_back(unary("relu", Shape{4, 5}, [](const auto& x) { return relu(x); }, -1.0, 1.0, 0.05));
  c.push_back(unary("tanh", Shape{4, 5}, [](const auto& x) { return tanh(x); }, -2.0, 2.0));
  c.push_back({"clip", false, [](std::uint64_t seed) {
                 Rng rng(seed);
                 auto x = random_tensor(rng, Shape{4, 5}, -1.0, 1.0);
                 // keep samples off the clip edges
                 std::vector<double> v(x.data().begin(), x.data().end());
                 for (auto& e : v) {
                   if (std::abs(std::abs(e) - 0.5) < 0.02) e *= 1.1;
                 }
                 return grad_check([](const auto& t) {
                   using T = typename std::decay_t<decltype(t)>::value_type;
                   return clip(t, T(-0.5), T(0.5));
                 }, TensorD::from_data(Shape{4, 5}, std::move(v)), opts(seed));
               }});
  c.push_back(unary("sum", Shape{3, 4}, [](const auto& x) { return sum(x); }));
  c.push_back(unary("mean", Shape{3, 4}, [](const auto& x) { return mean(x); }));
  c.push_back(unary("softmax", Shape{3, 4}, [](const auto& x) { return softmax(x, 1); }, -2.0, 2.0));
  c.push_back(unary("log_softmax", Shape{2, 3, 4}, [](const auto& x) { return log_softmax(x, 1); }, -2.0, 2.0));
  c.push_back(unary("batch_norm/rank2", Shape{5, 3}, [](const auto& x) {
    using T = typename std::decay_t<decltype(x)>::value_type;
    auto g = BasicTensor<T>::from_data(Shape{3}, {T(1.2), T(0.7), T(-0.4)});
    auto b = BasicTensor<T>::from_data(Shape{3}, {T(0.1), T(-0.3), T(0.2)});
    return batch_norm_transductive(x, g, b);
  }));
  c.push_back(unary("batch_norm/rank4", Shape{3, 2, 3, 3}, [](const auto& x) {
    using T = typename std::decay_t<decltype(x)>::value_type;
    auto g = BasicTensor<T>::from_data(Shape{2}, {T(0.9), T(1.4)});
    auto b = BasicTensor<T>::from_data(Shape{2}, {T(0.0), T(0.5)});
    return batch_norm_transductive(x, g, b);
  }));
  c.push_back(binary("batch_norm/affine", Shape{2}, Shape{2}, [](auto g, auto b) {
    using T = typename decltype(g)::value_type;
    auto x = BasicTensor<T>::from_data(Shape{3, 2}, {T(0.3), T(-1.0), T(0.8), T(0.2), T(-0.5), T(0.9)});
    return batch_norm_transductive(x, g, b);
  }));
  c.push_back(binary("squared_euclidean_distance", Shape{3, 4}, Shape{2, 4},
                     [](auto a, auto b) { return squared_euclidean_distance(a, b); }));
  c.push_back(unary("reshape", Shape{2, 6}, [](const auto& x) { return reshape(x, Shape{3, 4}); }));
  c.push_back(unary("flatten", Shape{2, 2, 3}, [](const auto& x) { return flatten(x); }));
  c.push_back(unary("slice_rows", Shape{4, 3}, [](const auto& x) { return slice_rows(x, 1, 2); }));
  c.push_back(unary("group_mean", Shape{5, 3}, [](const auto& x) {
    static const std::vector<std::size_t> groups{0, 1, 0, 2, 1};
    return group_mean(x, std::span<const std::size_t>(groups), 3);
  }));
  c.push_back(unary("nll_loss/sum", Shape{3, 4}, [](const auto& x) {
    static const std::vector<std::int64_t> y{2, 0, 3};
    return nll_loss(log_softmax(x, 1), std::span<const std::int64_t>(y), Reduction::sum);
  }));
  c.push_back(unary("cross_entropy", Shape{3, 4}, [](const auto& x) {
    static const std::vector<std::int64_t> y{1, 3, 0};
    return cross_entropy(x, std::span<const std::int64_t>(y));
  }, -2.0, 2.0));
  // Teacher logits are a constant of the loss, so only the student varies.
  c.push_back(unary("kd_loss", Shape{3, 4}, [](const auto& s) {
    using T = typename std::decay_t<decltype(s)>::value_type;
    auto t = BasicTensor<T>::from_data(Shape{3, 4}, {T(0.5), T(-1.0), T(2.0), T(0.1), T(1.5), T(0.3), T(-0.7),
                                                      T(0.0), T(-0.2), T(0.9), T(0.4), T(-1.3)});
    return kd_loss(s, t);
  }, -2.0, 2.0));

  // Quantizer chains with rounding replaced by identity: everything else in
  // the chain is analytic and must match.
  auto bypassed = [](std::string name, auto q, double lo, double hi) {
    return Case{std::move(name), false, [=](std::uint64_t seed) {
                  Rng rng(seed);
                  auto point = random_tensor(rng, Shape{4, 5}, lo, hi, 0.02);
                  RoundingBypass rb;
                  return grad_check(q, point, opts(seed));
                }};
  };
  c.push_back(bypassed("quant/weights-k4/bypass", [](const auto& w) { return quantize_weights(w, Bitwidth::bits(4)); },
                       -1.5, 1.5));
  c.push_back(bypassed("quant/weights-k1/bypass", [](const auto& w) { return quantize_weights(w, Bitwidth::bits(1)); },
                       -1.0, 1.0));
  c.push_back(bypassed("quant/activations-k4/bypass",
                       [](const auto& a) { return quantize_activations(a, Bitwidth::bits(4)); }, -0.5, 1.5));

  // Straight-through rounding: reported only.
  c.push_back(unary("quant/quantize_k-k3/ste", Shape{4, 5}, [](const auto& x) { return quantize_k(x, 3); }, 0.0, 1.0,
                    0.0, true));
  c.push_back(unary("quant/weights-k2/ste", Shape{4, 5},
                    [](const auto& w) { return quantize_weights(w, Bitwidth::bits(2)); }, -1.0, 1.0, 0.0, true));
  c.push_back(unary("quant/weights-k1/ste", Shape{4, 5},
                    [](const auto& w) { return quantize_weights(w, Bitwidth::bits(1)); }, -1.0, 1.0, 0.02, true));
  c.push_back(unary("quant/activations-k2/ste", Shape{4, 5},
                    [](const auto& a) { return quantize_activations(a, Bitwidth::bits(2)); }, -0.5, 1.5, 0.0, true));

  const auto fp = BitwidthTask::full_precision();
  const BitwidthTask w4a4{Bitwidth::bits(4), Bitwidth::bits(4)};
  c.push_back(classifier_case("model/conv5-maml/fp", ModelKind::conv5_maml, 3, fp, false, false));
  c.push_back(classifier_case("model/conv8-reduced/fp", ModelKind::conv8_reduced, 4, fp, false, false));
  c.push_back(classifier_case("model/conv5-maml/w4a4/bypass", ModelKind::conv5_maml, 3, w4a4, true, false));
  c.push_back(classifier_case("model/conv5-maml/w4a4/ste", ModelKind::conv5_maml, 3, w4a4, false, true));
  c.push_back(prototype_case());
  return c;
}

}  // namespace

std::vector<std::string> gradcheck_case_names() {
  std::vector<std::string> names;
  for (const auto& c : all_cases()) names.push_back(c.name);
  return names;
}

std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed, std::string_view filter) {
  std::vector<GradCheckEntry> out;
  std::uint64_t i = 0;
  for (const auto& c : all_cases()) {
    ++i;
    if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
    out.push_back({c.name, c.excluded, c.run(mix_seed(seed, i))});
  }
  return out;
}

std::vector<GradCheckEntry> run_gradcheck_trials(std::uint64_t seed, std::size_t trials, std::string_view filter) {
  std::vector<GradCheckEntry> merged;
  for (std::size_t t = 0; t < trials; ++t) {
    auto run = run_gradcheck_suite(mix_seed(seed, 1000 + t), filter);
    if (merged.empty()) {
      merged = std::move(run);
      for (auto& e : merged) {
        e.report.coords.clear();
        e.report.analytic.clear();
        e.report.numeric.clear();
        e.report.rel_errors.clear();
      }
      continue;
    }
    for (std::size_t i = 0; i < merged.size(); ++i) {
      auto& m = merged[i].report;
      const auto& r = run[i].report;
      const double total = m.mean_rel_error * static_cast<double>(m.checked) +
                           r.mean_rel_error * static_cast<double>(r.checked);
      m.checked += r.checked;
      m.mean_rel_error = m.checked ? total / static_cast<double>(m.checked) : 0.0;
      m.max_rel_error = std::max(m.max_rel_error, r.max_rel_error);
      m.passed = m.passed && r.passed;
      m.straight_through_present = m.straight_through_present || r.straight_through_present;
    }
  }
  return merged;
}

bool gradcheck_suite_passed(const std::vector<GradCheckEntry>& entries) {
  for (const auto& e : entries) {
    if (!e.excluded && !e.report.passed) return false;
  }
  return true;
}

std::string format_gradcheck_table(const std::vector<GradCheckEntry>& entries) {
  std::string out;
  char buf[192];
  std::snprintf(buf, sizeof buf, "%-34s %8s %12s %12s  %s\n", "case", "coords", "max_rel", "mean_rel", "status");
  out += buf;
  for (const auto& e : entries) {
    const char* status = e.excluded ? "excluded (straight-through)" : e.report.passed ? "ok" : "FAIL";
    std::snprintf(buf, sizeof buf, "%-34s %8zu %12.3e %12.3e  %s\n", e.name.c_str(), e.report.checked,
                  e.report.max_rel_error, e.report.mean_rel_error, status);
    out += buf;
  }
  return out;
}

}  // namespace bitadapt
