#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "bitadapt/models.hpp"

namespace bitadapt {

/// Parameter name -> flat gradient buffer.
using GradMap = std::map<std::string, std::vector<float>>;

/// Copies the accumulated leaf gradients of every parameter (zeros where no
/// gradient was recorded).
GradMap collect_grads(const Params& params);

enum class OptimizerKind { sgd, adam, adamw };

OptimizerKind parse_optimizer_kind(std::string_view text);
std::string to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // AdamW only, decoupled
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  /// One update. Parameters without an entry in `grads` are left alone.
  /// Throws ShapeError for unknown names or size mismatches.
  void apply(Params& params, const GradMap& grads);

  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  double learning_rate() const { return config_.learning_rate; }
  std::uint64_t step_count() const { return steps_; }
  const OptimizerConfig& config() const { return config_; }
  /// First/second moment buffers (Adam kinds), keyed like the parameters.
  const std::map<std::string, std::vector<double>>& first_moments() const { return m_; }
  const std::map<std::string, std::vector<double>>& second_moments() const { return v_; }

 private:
  OptimizerConfig config_;
  std::uint64_t steps_ = 0;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
};

/// In-place plain SGD step w -= lr * g, the arithmetic the sgd kind uses.
void sgd_step(std::span<float> w, std::span<const float> g, float lr);

enum class ScheduleKind { constant, step_decay, cosine };

ScheduleKind parse_schedule_kind(std::string_view text);
std::string to_string(ScheduleKind kind);

struct Schedule {
  ScheduleKind kind = ScheduleKind::constant;
  double base = 0.01;
  std::vector<std::size_t> milestones;  // step decay
  double factor = 0.1;                  // step decay
  std::size_t t_max = 1;                // cosine, no restart

  /// Throws std::invalid_argument when milestones are not strictly
  /// increasing, factor is outside (0, 1), or t_max is 0.
  void validate() const;
};

/// Learning rate for `epoch` (0-based). Cosine stays at 0 past t_max.
double rate_at(const Schedule& schedule, std::size_t epoch);

}  // namespace bitadapt
