#pragma once

#include <compare>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bitadapt/random.hpp"
#include "bitadapt/tensor.hpp"

namespace bitadapt {

/// Integer precision in [1, 16] or the full-precision sentinel.
class Bitwidth {
 public:
  static constexpr int kMaxBits = 16;

  /// Full precision.
  constexpr Bitwidth() = default;
  static constexpr Bitwidth fp() { return Bitwidth(); }
  /// Throws std::invalid_argument outside [1, 16].
  static Bitwidth bits(int k);
  /// "FP" (any case) or a decimal integer in [1, 16].
  static Bitwidth parse(std::string_view text);

  constexpr bool is_fp() const { return bits_ == 0; }
  /// Requires !is_fp().
  int value() const;
  std::string to_string() const;

  constexpr auto operator<=>(const Bitwidth&) const = default;

 private:
  explicit constexpr Bitwidth(int k) : bits_(k) {}
  int bits_ = 0;  // 0 encodes FP
};

struct BitwidthTask {
  Bitwidth w;
  Bitwidth a;

  static BitwidthTask full_precision() { return {}; }
  bool is_full_precision() const { return w.is_fp() && a.is_fp(); }
  /// (FP, 1) and (1, FP) are never trained or sampled.
  bool excluded() const;
  /// "(b_w,b_a)", e.g. "(2,FP)".
  std::string to_string() const;
  /// Accepts "b_w,b_a" with optional surrounding parentheses.
  static BitwidthTask parse(std::string_view text);

  auto operator<=>(const BitwidthTask&) const = default;
};

struct BitwidthTaskSet {
  std::vector<Bitwidth> weight_candidates;
  std::vector<Bitwidth> activation_candidates;
  /// Oversampled weight bitwidths, each also a weight candidate.
  std::vector<Bitwidth> minor_bitwidths;
  /// Tuple-list mode: when non-empty, tasks are drawn from this list instead
  /// of the candidate cross product.
  std::vector<BitwidthTask> tuples;

  /// Same candidates for weights and activations.
  static BitwidthTaskSet uniform(std::vector<Bitwidth> candidates, std::vector<Bitwidth> minor = {});

  /// Throws std::invalid_argument on empty or inconsistent sets.
  void validate() const;
  /// Every non-excluded pair in candidate order (or the tuple list).
  std::vector<BitwidthTask> valid_pairs() const;
  bool contains_full_precision() const;
};

/// Draws M bitwidth tasks. Slot 0 is (FP, FP) when `fix_first_fp`; slot 1
/// takes a minor weight bitwidth when minors exist and M >= 3; the rest are
/// uniform over the valid pairs.
std::vector<BitwidthTask> sample_bitwidth_tasks(const BitwidthTaskSet& ts, std::size_t m, Rng& rng,
                                                bool fix_first_fp);

/// Uniform k-bit grid on [0, 1]: round(x (2^k-1)) / (2^k-1), ties away from
/// zero. Straight-through gradient.
template <Real T>
BasicTensor<T> quantize_k(const BasicTensor<T>& x, int k);

/// FP returns `w` itself. k >= 2 maps tanh(w) onto [0, 1], quantizes, and
/// rescales to [-1, 1]. k = 1 gives sign(w) * mean|w| with sign(0) = +1.
template <Real T>
BasicTensor<T> quantize_weights(const BasicTensor<T>& w, Bitwidth b);

/// FP returns `a` itself; otherwise quantize_k(clip(a, 0, 1), k).
template <Real T>
BasicTensor<T> quantize_activations(const BasicTensor<T>& a, Bitwidth b);

/// While alive on this thread, rounding steps (grid rounding and the 1-bit
/// sign) become the identity so the remaining analytic parts of the
/// quantizers can be checked against finite differences.
class RoundingBypass {
 public:
  RoundingBypass();
  ~RoundingBypass();
  RoundingBypass(const RoundingBypass&) = delete;
  RoundingBypass& operator=(const RoundingBypass&) = delete;

 private:
  bool previous_;
};

bool rounding_bypassed() noexcept;

}  // namespace bitadapt
