#include "bitadapt/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bitadapt/errors.hpp"

namespace bitadapt {

GradMap collect_grads(const Params& params) {
  GradMap out;
  for (const auto& [name, t] : params) {
    if (t.has_grad()) {
      auto g = t.grad();
      out.emplace(name, std::vector<float>(g.begin(), g.end()));
    } else {
      out.emplace(name, std::vector<float>(t.numel(), 0.0f));
    }
  }
  return out;
}

OptimizerKind parse_optimizer_kind(std::string_view text) {
  if (text == "sgd") return OptimizerKind::sgd;
  if (text == "adam") return OptimizerKind::adam;
  if (text == "adamw") return OptimizerKind::adamw;
  throw std::invalid_argument("unknown optimizer '" + std::string(text) + "'");
}

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adamw: return "adamw";
  }
  return "?";
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {
  if (!(config_.learning_rate >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
}

void sgd_step(std::span<float> w, std::span<const float> g, float lr) {
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = w[i] - lr * g[i];
}

void Optimizer::apply(Params& params, const GradMap& grads) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ShapeError("optimizer", "gradient for unknown parameter " + name);
    if (it->second.numel() != g.size()) {
      throw ShapeError("optimizer", name + " has " + std::to_string(it->second.numel()) + " values, gradient has " +
                                        std::to_string(g.size()));
    }
  }
  ++steps_;
  const double lr = config_.learning_rate;
  for (const auto& [name, g] : grads) {
    auto w = params.at(name).mutable_data();
    if (config_.kind == OptimizerKind::sgd) {
      sgd_step(w, g, static_cast<float>(lr));
      continue;
    }
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    const bool decoupled = config_.kind == OptimizerKind::adamw && config_.weight_decay != 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = g[i];
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      double wi = w[i];
      if (decoupled) wi -= lr * config_.weight_decay * wi;
      wi -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
      w[i] = static_cast<float>(wi);
    }
  }
}

ScheduleKind parse_schedule_kind(std::string_view text) {
  if (text == "constant") return ScheduleKind::constant;
  if (text == "step") return ScheduleKind::step_decay;
  if (text == "cosine") return ScheduleKind::cosine;
  throw std::invalid_argument("unknown schedule '" + std::string(text) + "'");
}

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::step_decay: return "step";
    case ScheduleKind::cosine: return "cosine";
  }
  return "?";
}

void Schedule::validate() const {
  if (kind == ScheduleKind::step_decay) {
    for (std::size_t i = 1; i < milestones.size(); ++i) {
      if (milestones[i] <= milestones[i - 1]) throw std::invalid_argument("milestones must be strictly increasing");
    }
    if (!(factor > 0.0 && factor < 1.0)) throw std::invalid_argument("decay factor must lie in (0, 1)");
  }
  if (kind == ScheduleKind::cosine && t_max == 0) throw std::invalid_argument("cosine period must be positive");
}

double rate_at(const Schedule& s, std::size_t epoch) {
  switch (s.kind) {
    case ScheduleKind::constant:
      return s.base;
    case ScheduleKind::step_decay: {
      double r = s.base;
      for (auto m : s.milestones) {
        if (m <= epoch) r *= s.factor;
      }
      return r;
    }
    case ScheduleKind::cosine: {
      const double t = static_cast<double>(std::min(epoch, s.t_max)) / static_cast<double>(s.t_max);
      return s.base * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
    }
  }
  return s.base;
}

}  // namespace bitadapt
