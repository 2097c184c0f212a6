#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "bitadapt/graph.hpp"
#include "bitadapt/ops.hpp"
#include "bitadapt/random.hpp"
#include "bitadapt/tensor.hpp"

namespace bitadapt {

struct GradCheckOptions {
  double eps = 1e-4;
  double tol = 1e-3;
  // Denominator floor for relative error so near-zero gradients compare
  // absolutely instead of blowing up.
  double floor = 1e-4;
  // 0 checks every coordinate; otherwise a seeded random subset of this size.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = false;
  // The recorded graph contains straight-through rounding nodes, whose
  // gradient is a convention; a mismatch is expected there.
  bool straight_through_present = false;
  std::vector<std::size_t> coords;
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> rel_errors;
};

/// Compares the autodiff gradient of `f` at `point` with central differences.
///
/// `f` is a generic callable taking a BasicTensor<T> and returning one, and is
/// invoked with T = A for the autodiff pass and T = double for the numeric
/// pass. Non-scalar outputs are projected onto fixed random weights first.
template <Real A = double, typename F>
GradCheckReport grad_check(F&& f, const TensorD& point, const GradCheckOptions& opts = {}) {
  GradCheckReport report;
  Rng rng(opts.seed);

  // Fixed projection shared by both passes.
  std::vector<double> proj;
  auto reduce = [&proj]<Real T>(const BasicTensor<T>& out) {
    if (out.numel() == 1) return reshape(out, Shape{});
    std::vector<T> w(proj.begin(), proj.end());
    return sum(mul(out, BasicTensor<T>::from_data(out.shape(), std::move(w))));
  };
  {
    NoGradGuard ng;
    auto probe = f(point);
    if (probe.numel() > 1) {
      proj.resize(probe.numel());
      for (auto& v : proj) v = rng.uniform(-1.0, 1.0);
    }
  }

  auto x = point.template cast<A>();
  x.set_requires_grad(true);
  auto loss = reduce(f(x));
  report.straight_through_present = Graph<A>(loss).contains_straight_through();
  loss.backward();
  auto grad = x.grad_tensor();

  const std::size_t n = point.numel();
  std::vector<std::size_t> coords(n);
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (opts.max_coords != 0 && opts.max_coords < n) {
    rng.shuffle(std::span<std::size_t>(coords));
    coords.resize(opts.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  NoGradGuard ng;
  std::vector<double> base(point.data().begin(), point.data().end());
  auto eval_at = [&](std::size_t i, double delta) {
    auto p = base;
    p[i] += delta;
    return reduce(f(TensorD::from_data(point.shape(), std::move(p)))).item();
  };
  double total = 0.0;
  for (auto i : coords) {
    const double num = (eval_at(i, opts.eps) - eval_at(i, -opts.eps)) / (2.0 * opts.eps);
    const double ana = grad.data()[i];
    const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), opts.floor});
    report.coords.push_back(i);
    report.analytic.push_back(ana);
    report.numeric.push_back(num);
    report.rel_errors.push_back(rel);
    report.max_rel_error = std::max(report.max_rel_error, rel);
    total += rel;
  }
  report.checked = coords.size();
  report.mean_rel_error = coords.empty() ? 0.0 : total / static_cast<double>(coords.size());
  report.passed = report.max_rel_error < opts.tol;
  return report;
}

}  // namespace bitadapt
