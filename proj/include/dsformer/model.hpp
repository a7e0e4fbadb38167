#pragma once

// The full forecaster: double sampling → two 3D TVA blocks → merge norm →
// 2D TVA integration block → affine decoder D → L per variable.

#include "dsformer/attention.hpp"
#include "dsformer/autograd.hpp"
#include "dsformer/errors.hpp"
#include "dsformer/rng.hpp"
#include "dsformer/sampling.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dsformer {

/// Component-removal switches.
struct Ablation {
  bool ps = false; ///< drop the piecewise-sampled branch
  bool ds = false; ///< drop the down-sampled branch
  bool as = false; ///< no sampling: one TVA path on the raw window (C = 1)
  bool ta = false; ///< temporal attention replaced by a two-layer MLP
  bool va = false; ///< variable attention removed

  bool any() const { return ps || ds || as || ta || va; }
  friend bool operator==(const Ablation&, const Ablation&) = default;
};

/// "full", "ps", "ds", "as", "ta", "va".
inline std::string ablation_name(const Ablation& a) {
  if (a.ps) return "ps";
  if (a.ds) return "ds";
  if (a.as) return "as";
  if (a.ta) return "ta";
  if (a.va) return "va";
  return "full";
}

inline Ablation parse_ablation(std::string_view s) {
  Ablation a;
  if (s == "full" || s.empty()) return a;
  if (s == "ps") a.ps = true;
  else if (s == "ds") a.ds = true;
  else if (s == "as") a.as = true;
  else if (s == "ta") a.ta = true;
  else if (s == "va") a.va = true;
  else throw ConfigError("unknown ablation '" + std::string(s) + "' (expected ps, ds, as, ta or va)");
  return a;
}

struct ModelConfig {
  std::size_t n_vars = 7;
  std::size_t history = 36;
  std::size_t horizon = 24;
  std::size_t interval = 2;
  std::size_t heads = 2;
  double dropout = 0.15;
  VarAxisMode var_mode = VarAxisMode::variables;
  Ablation ablate;
  double w_l1 = 0.35;
  /// Width of an optional hidden decoder layer; 0 keeps the single affine decoder.
  std::size_t decoder_hidden = 0;
  /// Apply 1/sqrt(d_k) to temporal attention logits as well.
  bool scale_temporal = false;

  /// C actually used by the network (1 when sampling is ablated).
  std::size_t effective_interval() const { return ablate.as ? 1 : interval; }
  /// Feature width D = H / C of every TVA block.
  std::size_t width() const { return history / effective_interval(); }

  void validate() const {
    if (n_vars < 1) throw ConfigError("n_vars must be >= 1");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    validate_interval(history, interval);
    if (heads < 1) throw ConfigError("heads must be >= 1");
    if (width() % heads != 0)
      throw ConfigError("heads=" + std::to_string(heads) + " does not divide H/C=" + std::to_string(width()));
    if (var_mode == VarAxisMode::subsequences && n_vars % heads != 0)
      throw ConfigError("subsequences mode needs heads=" + std::to_string(heads) + " to divide N=" +
                        std::to_string(n_vars));
    if (!(w_l1 >= 0.0 && w_l1 <= 1.0)) throw ConfigError("w_l1 must be in [0, 1]");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    if (ablate.ta && ablate.va) throw ConfigError("cannot ablate both temporal and variable attention");
    if (ablate.ps && ablate.ds) throw ConfigError("cannot ablate both sampling branches");
    if (ablate.as && (ablate.ps || ablate.ds)) throw ConfigError("'as' already removes both sampling branches");
  }
};

struct ModelParams {
  ParamStore store;
  TvaParams tva_ds;
  TvaParams tva_ps;
  NormIdx merge_norm;
  TvaParams tva_fusion;
  std::optional<LinearIdx> decoder_hidden;
  LinearIdx decoder;
};

/// Uniform ±sqrt(1/fan_in) weights and biases, unit gains, zero norm biases.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelParams mp;
  const std::size_t c = cfg.effective_interval();
  const std::size_t d = cfg.width();
  const TvaShape block3{cfg.n_vars, c, d};
  const bool mlp = cfg.ablate.ta;
  mp.tva_ds = add_tva_3d(mp.store, "tva_ds", block3, cfg.heads, cfg.var_mode, mlp, rng);
  mp.tva_ps = add_tva_3d(mp.store, "tva_ps", block3, cfg.heads, cfg.var_mode, mlp, rng);
  mp.merge_norm = add_norm(mp.store, "merge_norm", d);
  mp.tva_fusion = add_tva_2d(mp.store, "tva_fusion", TvaShape{cfg.n_vars, 1, d}, cfg.heads, mlp, rng);
  std::size_t dec_in = d;
  if (cfg.decoder_hidden > 0) {
    mp.decoder_hidden = add_linear(mp.store, "decoder_hidden", d, cfg.decoder_hidden, rng);
    dec_in = cfg.decoder_hidden;
  }
  mp.decoder = add_linear(mp.store, "decoder", dec_in, cfg.horizon, rng);
  return mp;
}

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;
  AttentionTrace* trace = nullptr;
};

namespace detail {

inline Var forward_impl(const ModelParams& mp, ParamStore* trainable, const ModelConfig& cfg, const Tensor& x,
                        const ForwardOptions& opt) {
  const bool batched = x.rank() == 3;
  if (!(x.rank() == 2 || batched) || x.shape()[x.rank() - 2] != cfg.n_vars || x.shape().back() != cfg.history)
    throw DimensionError("model expects [N=" + std::to_string(cfg.n_vars) + ", H=" + std::to_string(cfg.history) +
                         "] input (optionally batched), got " + shape_str(x.shape()));
  if (opt.training && cfg.dropout > 0.0 && !opt.rng) throw ConfigError("training with dropout needs an rng");

  ForwardContext ctx{mp.store, trainable, cfg.dropout, opt.training, opt.rng, opt.trace, cfg.scale_temporal};
  const BranchAblation branch{cfg.ablate.ta, cfg.ablate.va};
  const std::size_t b = batched ? x.shape()[0] : 1;
  const std::size_t n = cfg.n_vars;
  const Tensor xb = x.reshaped({b, n, cfg.history});

  std::optional<Var> merged;
  auto accumulate = [&](Var part) { merged = merged ? add(*merged, part) : part; };
  if (cfg.ablate.as) {
    accumulate(tva_block_3d(ctx, constant(xb.reshaped({b, n, 1, cfg.history})), mp.tva_ds, cfg.var_mode, branch,
                            "tva_ds"));
  } else {
    SampledPair pair = sample_pair(xb, cfg.interval);
    if (!cfg.ablate.ds)
      accumulate(tva_block_3d(ctx, constant(std::move(pair.x_ds)), mp.tva_ds, cfg.var_mode, branch, "tva_ds"));
    if (!cfg.ablate.ps)
      accumulate(tva_block_3d(ctx, constant(std::move(pair.x_ps)), mp.tva_ps, cfg.var_mode, branch, "tva_ps"));
  }
  Var z = layer_norm(*merged, ctx.leaf(mp.merge_norm.gain), ctx.leaf(mp.merge_norm.bias));
  z = tva_block_2d(ctx, z, mp.tva_fusion, branch, "tva_fusion");
  if (mp.decoder_hidden) z = relu(linear(z, ctx.leaf(mp.decoder_hidden->weight), ctx.leaf(mp.decoder_hidden->bias)));
  Var y = linear(z, ctx.leaf(mp.decoder.weight), ctx.leaf(mp.decoder.bias));
  require_finite(y.value(), "model output");
  if (!batched) y = reshape(y, {n, cfg.horizon});
  return y;
}

} // namespace detail

/// Differentiable forward for x of shape [N, H] or [B, N, H]; result is [N, L] or [B, N, L].
/// backward() on a loss built from the result fills mp.store gradients.
inline Var forward_graph(ModelParams& mp, const ModelConfig& cfg, const Tensor& x, const ForwardOptions& opt) {
  return detail::forward_impl(mp, &mp.store, cfg, x, opt);
}

inline Tensor forward(const ModelParams& mp, const ModelConfig& cfg, const Tensor& x, bool training, Rng* rng,
                      AttentionTrace* trace = nullptr) {
  NoGradGuard guard;
  return detail::forward_impl(mp, nullptr, cfg, x, ForwardOptions{training, rng, trace}).value();
}

/// Eval-mode forward; no randomness involved.
inline Tensor predict(const ModelParams& mp, const ModelConfig& cfg, const Tensor& x) {
  return forward(mp, cfg, x, false, nullptr);
}

/// Composite L1/L2 training objective over every batch, variable and horizon element.
inline Var loss(const Var& y, const Tensor& y_true, double w_l1) { return composite_loss(y, y_true, w_l1); }

inline double loss(const Tensor& y, const Tensor& y_true, double w_l1) {
  NoGradGuard guard;
  return composite_loss(constant(y), y_true, w_l1).value()[0];
}

} // namespace dsformer
