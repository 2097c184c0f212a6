#include "bitadapt/quant.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <stdexcept>

#include "bitadapt/detail/node_util.hpp"
#include "bitadapt/ops.hpp"

namespace bitadapt {

namespace {

thread_local bool g_bypass = false;

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <Real T>
std::vector<std::vector<T>> pass_through(std::span<const T> g) {
  return {std::vector<T>(g.begin(), g.end())};
}

}  // namespace

Bitwidth Bitwidth::bits(int k) {
  if (k < 1 || k > kMaxBits) throw std::invalid_argument("bitwidth must be in [1, 16] or FP, got " + std::to_string(k));
  return Bitwidth(k);
}

Bitwidth Bitwidth::parse(std::string_view text) {
  text = trim(text);
  if (text.size() == 2 && std::toupper(static_cast<unsigned char>(text[0])) == 'F' &&
      std::toupper(static_cast<unsigned char>(text[1])) == 'P') {
    return fp();
  }
  int k = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), k);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw std::invalid_argument("bad bitwidth '" + std::string(text) + "'");
  }
  return bits(k);
}

int Bitwidth::value() const {
  if (is_fp()) throw std::logic_error("full-precision bitwidth has no integer value");
  return bits_;
}

std::string Bitwidth::to_string() const { return is_fp() ? "FP" : std::to_string(bits_); }

bool BitwidthTask::excluded() const {
  auto one = [](Bitwidth b) { return !b.is_fp() && b.value() == 1; };
  return (w.is_fp() && one(a)) || (one(w) && a.is_fp());
}

std::string BitwidthTask::to_string() const { return "(" + w.to_string() + "," + a.to_string() + ")"; }

BitwidthTask BitwidthTask::parse(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '(') text.remove_prefix(1);
  if (!text.empty() && text.back() == ')') text.remove_suffix(1);
  const auto comma = text.find(',');
  if (comma == std::string_view::npos) throw std::invalid_argument("bad bitwidth task '" + std::string(text) + "'");
  return {Bitwidth::parse(text.substr(0, comma)), Bitwidth::parse(text.substr(comma + 1))};
}

BitwidthTaskSet BitwidthTaskSet::uniform(std::vector<Bitwidth> candidates, std::vector<Bitwidth> minor) {
  BitwidthTaskSet ts;
  ts.weight_candidates = candidates;
  ts.activation_candidates = std::move(candidates);
  ts.minor_bitwidths = std::move(minor);
  return ts;
}

void BitwidthTaskSet::validate() const {
  if (!tuples.empty()) {
    for (const auto& t : tuples) {
      if (t.excluded()) throw std::invalid_argument("task set lists excluded pair " + t.to_string());
    }
  } else {
    if (weight_candidates.empty() || activation_candidates.empty()) {
      throw std::invalid_argument("task set needs weight and activation candidates");
    }
    if (valid_pairs().empty()) throw std::invalid_argument("task set has no valid pair");
  }
  for (auto m : minor_bitwidths) {
    const auto& pool = weight_candidates;
    const bool listed = tuples.empty() ? std::find(pool.begin(), pool.end(), m) != pool.end()
                                       : std::any_of(tuples.begin(), tuples.end(),
                                                     [m](const BitwidthTask& t) { return t.w == m; });
    if (!listed) throw std::invalid_argument("minor bitwidth " + m.to_string() + " is not a weight candidate");
  }
}

std::vector<BitwidthTask> BitwidthTaskSet::valid_pairs() const {
  if (!tuples.empty()) return tuples;
  std::vector<BitwidthTask> out;
  for (auto w : weight_candidates) {
    for (auto a : activation_candidates) {
      BitwidthTask t{w, a};
      if (!t.excluded()) out.push_back(t);
    }
  }
  return out;
}

bool BitwidthTaskSet::contains_full_precision() const {
  const auto pairs = valid_pairs();
  return std::any_of(pairs.begin(), pairs.end(), [](const BitwidthTask& t) { return t.is_full_precision(); });
}

std::vector<BitwidthTask> sample_bitwidth_tasks(const BitwidthTaskSet& ts, std::size_t m, Rng& rng,
                                                bool fix_first_fp) {
  ts.validate();
  if (m < 1) throw std::invalid_argument("need at least one bitwidth branch");
  if (fix_first_fp && !ts.contains_full_precision()) {
    throw std::invalid_argument("fixed (FP,FP) first branch requires FP in the task set");
  }
  std::vector<BitwidthTask> out;
  out.reserve(m);

  auto draw = [&]() -> BitwidthTask {
    if (!ts.tuples.empty()) return ts.tuples[rng.uniform_index(ts.tuples.size())];
    for (;;) {
      BitwidthTask t{ts.weight_candidates[rng.uniform_index(ts.weight_candidates.size())],
                     ts.activation_candidates[rng.uniform_index(ts.activation_candidates.size())]};
      if (!t.excluded()) return t;
    }
  };
  auto draw_minor = [&]() -> BitwidthTask {
    const Bitwidth w = ts.minor_bitwidths[rng.uniform_index(ts.minor_bitwidths.size())];
    std::vector<Bitwidth> acts;
    if (ts.tuples.empty()) {
      for (auto a : ts.activation_candidates) {
        if (!BitwidthTask{w, a}.excluded()) acts.push_back(a);
      }
    } else {
      for (const auto& t : ts.tuples) {
        if (t.w == w) acts.push_back(t.a);
      }
    }
    if (acts.empty()) throw std::invalid_argument("minor bitwidth " + w.to_string() + " has no valid activation");
    return {w, acts[rng.uniform_index(acts.size())]};
  };

  for (std::size_t slot = 0; slot < m; ++slot) {
    if (slot == 0 && fix_first_fp) {
      out.push_back(BitwidthTask::full_precision());
    } else if (slot == 1 && !ts.minor_bitwidths.empty() && m >= 3) {
      out.push_back(draw_minor());
    } else {
      out.push_back(draw());
    }
  }
  return out;
}

RoundingBypass::RoundingBypass() : previous_(g_bypass) { g_bypass = true; }
RoundingBypass::~RoundingBypass() { g_bypass = previous_; }
bool rounding_bypassed() noexcept { return g_bypass; }

template <Real T>
BasicTensor<T> quantize_k(const BasicTensor<T>& x, int k) {
  if (k < 1 || k > Bitwidth::kMaxBits) throw std::invalid_argument("quantize_k: k must be in [1, 16]");
  auto dx = x.data();
  std::vector<T> out(dx.begin(), dx.end());
  if (!g_bypass) {
    const T n = static_cast<T>((1u << k) - 1u);
    for (auto& v : out) v = std::round(v * n) / n;
  }
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [] {
    return detail::make_node<T>(
        "quantize_k", [](const detail::Node<T>&, std::span<const T> g) { return pass_through(g); },
        !g_bypass);
  });
}

namespace {

// tanh(w) / (2 max|tanh(w)|) + 1/2 applied to t = tanh(w); gradient includes
// the dependence of the max on its argmax element.
template <Real T>
BasicTensor<T> normalize_unit(const BasicTensor<T>& t) {
  auto d = t.data();
  std::size_t arg = 0;
  for (std::size_t i = 1; i < d.size(); ++i) {
    if (std::abs(d[i]) > std::abs(d[arg])) arg = i;
  }
  const T m = std::abs(d[arg]);
  std::vector<T> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    out[i] = m > T{0} ? d[i] / (T{2} * m) + T{0.5} : T{0.5};
  }
  return detail::make_result<T>(t.shape(), std::move(out), {&t}, [arg, m] {
    return detail::make_node<T>("normalize_unit", [arg, m](const detail::Node<T>& node, std::span<const T> g) {
      std::vector<T> gx(g.size(), T{0});
      if (m > T{0}) {
        const auto& v = node.inputs[0]->data;
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          gx[i] = g[i] / (T{2} * m);
          dot += static_cast<double>(g[i]) * v[i];
        }
        const double sgn = v[arg] >= T{0} ? 1.0 : -1.0;
        gx[arg] = static_cast<T>(gx[arg] - sgn * dot / (2.0 * static_cast<double>(m) * m));
      }
      return std::vector<std::vector<T>>{std::move(gx)};
    });
  });
}

// sign(w) * mean|w|. The sign passes gradients straight through (as the
// identity on w / mean|w|); the scale is differentiated exactly.
template <Real T>
BasicTensor<T> binarize(const BasicTensor<T>& w) {
  auto d = w.data();
  double acc = 0.0;
  for (auto v : d) acc += std::abs(v);
  const std::size_t n = d.size();
  const T e = static_cast<T>(acc / static_cast<double>(n));
  std::vector<T> out(n);
  const bool bypass = g_bypass;
  for (std::size_t i = 0; i < n; ++i) {
    if (bypass) {
      out[i] = e > T{0} ? (d[i] / e) * e : d[i];
    } else {
      out[i] = d[i] >= T{0} ? e : -e;
    }
  }
  return detail::make_result<T>(w.shape(), std::move(out), {&w}, [e, n, bypass] {
    return detail::make_node<T>(
        "binarize",
        [e, n, bypass](const detail::Node<T>& node, std::span<const T> g) {
          const auto& v = node.inputs[0]->data;
          double gs = 0.0, gw = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            // Bypassed sign is w/E, so both sums coincide and only g survives.
            if (bypass && e > T{0}) {
              gs += static_cast<double>(g[i]) * v[i] / e;
            } else {
              gs += v[i] >= T{0} ? static_cast<double>(g[i]) : -static_cast<double>(g[i]);
            }
            if (e > T{0}) gw += static_cast<double>(g[i]) * v[i] / e;
          }
          const double c = (gs - gw) / static_cast<double>(n);
          std::vector<T> gx(n);
          for (std::size_t i = 0; i < n; ++i) {
            gx[i] = static_cast<T>(g[i] + (v[i] >= T{0} ? c : -c));
          }
          return std::vector<std::vector<T>>{std::move(gx)};
        },
        !bypass);
  });
}

}  // namespace

template <Real T>
BasicTensor<T> quantize_weights(const BasicTensor<T>& w, Bitwidth b) {
  if (b.is_fp()) return w;
  if (b.value() == 1) return binarize(w);
  auto unit = normalize_unit(tanh(w));
  return add_scalar(scale(quantize_k(unit, b.value()), T{2}), T{-1});
}

template <Real T>
BasicTensor<T> quantize_activations(const BasicTensor<T>& a, Bitwidth b) {
  if (b.is_fp()) return a;
  return quantize_k(clip(a, T{0}, T{1}), b.value());
}

template BasicTensor<float> quantize_k(const BasicTensor<float>&, int);
template BasicTensor<double> quantize_k(const BasicTensor<double>&, int);
template BasicTensor<float> quantize_weights(const BasicTensor<float>&, Bitwidth);
template BasicTensor<double> quantize_weights(const BasicTensor<double>&, Bitwidth);
template BasicTensor<float> quantize_activations(const BasicTensor<float>&, Bitwidth);
template BasicTensor<double> quantize_activations(const BasicTensor<double>&, Bitwidth);

}  // namespace bitadapt
