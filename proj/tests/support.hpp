#pragma once

// Shared oracles for the unit and acceptance tests.

#include "dsformer/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace dsformer::testing {

inline Tensor randn(Shape s, Rng& rng, double sd = 1.0) {
  Tensor t(std::move(s));
  for (auto& v : t.storage()) v = rng.normal(0.0, sd);
  return t;
}

/// Reorders the variable axis (axis `axis`) so that output slot i holds input slot perm[i].
inline Tensor permute_axis(const Tensor& x, std::size_t axis, const std::vector<std::size_t>& perm) {
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Tensor y(s);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(x.data().begin() + (o * n + perm[i]) * inner, inner,
                  y.storage().begin() + (o * n + i) * inner);
  return y;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

/// Central finite differences over every scalar of every parameter, compared with
/// backward(). Relative error |a - n| / max(|a|, |n|, floor).
/// With dropout, the rng is reseeded per evaluation so every pass sees the same mask.
inline GradCheckResult grad_check(ModelParams& mp, const ModelConfig& cfg, const Tensor& x, const Tensor& y,
                                  bool training = false, std::uint64_t mask_seed = 0, double h = 1e-5,
                                  double floor = 1e-4) {
  auto eval = [&](bool graph) {
    Rng rng(mask_seed);
    ForwardOptions opt{training, &rng, nullptr};
    if (graph) return loss(forward_graph(mp, cfg, x, opt), y, cfg.w_l1);
    NoGradGuard guard;
    return loss(forward_graph(mp, cfg, x, opt), y, cfg.w_l1);
  };
  mp.store.zero_grad();
  backward(eval(true));
  GradCheckResult r;
  for (auto& p : mp.store) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double up = eval(false).value()[0];
      p.value[i] = orig - h;
      const double down = eval(false).value()[0];
      p.value[i] = orig;
      const double num = (up - down) / (2.0 * h);
      const double ana = p.grad[i];
      const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), floor});
      ++r.checked;
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

/// Closed-form parameter count obtained by enumerating the layers of the architecture.
inline std::size_t expected_param_count(const ModelConfig& cfg) {
  const std::size_t n = cfg.n_vars, c = cfg.effective_interval(), d = cfg.width(), l = cfg.horizon;
  auto lin = [](std::size_t i, std::size_t o) { return i * o + o; };
  auto norm = [](std::size_t w) { return 2 * w; };
  auto attn = [&](std::size_t f, std::size_t w) { return 3 * lin(f, f) + norm(w); };
  const std::size_t mlp = cfg.ablate.ta ? 2 * lin(d, d) + norm(d) : 0;
  const std::size_t var_features = cfg.var_mode == VarAxisMode::variables ? d : n;
  const std::size_t block3 = attn(d, d) + attn(var_features, d) + mlp + norm(d) + lin(c * d, d);
  const std::size_t block2 = attn(d, d) + attn(d, d) + mlp + norm(d) + lin(d, d);
  const std::size_t dec = cfg.decoder_hidden ? lin(d, cfg.decoder_hidden) + lin(cfg.decoder_hidden, l) : lin(d, l);
  return 2 * block3 + norm(d) + block2 + dec;
}

} // namespace dsformer::testing
