#pragma once

#include "dsformer/autograd.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace dsformer {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  static AdamState for_params(const ParamStore& params) {
    AdamState s;
    for (const auto& p : params) {
      s.first_moment.emplace_back(p.value.shape());
      s.second_moment.emplace_back(p.value.shape());
    }
    return s;
  }
};

/// Bias-corrected Adam update followed by zeroing every gradient.
inline void adam_step(ParamStore& params, AdamState& state, double lr) {
  if (state.first_moment.size() != params.size()) state = AdamState::for_params(params);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  std::size_t i = 0;
  for (auto& p : params) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    ++i;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p.value[k] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    ++p.version;
  }
  params.zero_grad();
}

/// Global L2 norm of all gradients.
inline double grad_norm(const ParamStore& params) {
  double s = 0.0;
  for (const auto& p : params)
    for (double g : p.grad.data()) s += g * g;
  return std::sqrt(s);
}

/// Rescales gradients so their global norm is at most max_norm. Returns true if clipped.
inline bool clip_grad_norm(ParamStore& params, double max_norm) {
  const double n = grad_norm(params);
  if (n <= max_norm || n == 0.0) return false;
  const double f = max_norm / n;
  for (auto& p : params)
    for (auto& g : p.grad.storage()) g *= f;
  return true;
}

/// Step decay: base_lr · gamma^(milestones ≤ epoch).
struct LrSchedule {
  double base_lr = 1e-4;
  std::vector<int> milestones{25, 50, 75};
  double gamma = 0.5;

  void validate() const {
    if (!(base_lr >= 0.0)) throw ConfigError("base learning rate must be >= 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("lr gamma must be in (0, 1]");
    for (std::size_t i = 1; i < milestones.size(); ++i)
      if (milestones[i] <= milestones[i - 1]) throw ConfigError("lr milestones must be strictly increasing");
  }
};

inline double lr_at(const LrSchedule& schedule, int epoch) {
  if (epoch < 0) throw ConfigError("epoch must be >= 0");
  int passed = 0;
  for (int m : schedule.milestones)
    if (m <= epoch) ++passed;
  return schedule.base_lr * std::pow(schedule.gamma, passed);
}

} // namespace dsformer
