#pragma once

// Temporal/variable attention (TVA) blocks.
//
// Layouts: the 3D block consumes [..., N, C, D] (variables, subsequences,
// features per subsequence) and emits [..., N, D]; the 2D block maps
// [..., N, D] to [..., N, D]. Leading axes are batch axes.

#include "dsformer/autograd.hpp"
#include "dsformer/errors.hpp"
#include "dsformer/rng.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dsformer {

enum class VarAxisMode {
  variables,    ///< tokens are the N variables, scores N×N
  subsequences, ///< tokens are the C subsequences, features are the N variables
};

inline std::string_view to_string(VarAxisMode m) {
  return m == VarAxisMode::variables ? "variables" : "subsequences";
}

inline VarAxisMode parse_var_axis_mode(std::string_view s) {
  if (s == "variables") return VarAxisMode::variables;
  if (s == "subsequences") return VarAxisMode::subsequences;
  throw ConfigError("unknown variable-attention mode: " + std::string(s));
}

struct LinearIdx {
  std::size_t weight = 0;
  std::size_t bias = 0;
};

struct NormIdx {
  std::size_t gain = 0;
  std::size_t bias = 0;
};

struct AttentionParams {
  LinearIdx q, k, v;
  NormIdx norm; ///< residual + layer norm after the attention
  std::size_t heads = 1;
};

/// Substitute for the temporal branch when it is ablated: two shared layers of equal width.
struct MlpBranch {
  LinearIdx fc1, fc2;
  NormIdx norm;
};

struct TvaParams {
  AttentionParams temporal;
  AttentionParams variable;
  std::optional<MlpBranch> temporal_mlp;
  LinearIdx fuse;
  NormIdx fuse_norm;
};

struct BranchAblation {
  bool ta = false; ///< temporal attention replaced by MlpBranch
  bool va = false; ///< variable attention omitted from the fused sum
};

/// Collects every attention logit and score tensor produced during a forward pass.
struct AttentionTrace {
  struct Entry {
    std::string tag;
    Tensor logits; ///< scaled, pre-softmax
    Tensor scores; ///< post-softmax, before dropout
  };
  std::vector<Entry> entries;
};

/// Per-forward state shared by all blocks.
struct ForwardContext {
  const ParamStore& params;
  /// Set when gradients should flow back into the parameters.
  ParamStore* trainable = nullptr;
  double dropout = 0.0;
  bool training = false;
  Rng* rng = nullptr;
  AttentionTrace* trace = nullptr;
  bool scale_temporal = false;

  Var leaf(std::size_t id) const { return trainable ? param((*trainable)[id]) : constant(params[id].value); }
};

// ---------------------------------------------------------------------------
// Parameter construction

inline LinearIdx add_linear(ParamStore& store, const std::string& prefix, std::size_t din, std::size_t dout,
                            Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(din));
  Tensor w({din, dout});
  for (auto& v : w.storage()) v = rng.uniform(-bound, bound);
  Tensor b({dout});
  for (auto& v : b.storage()) v = rng.uniform(-bound, bound);
  LinearIdx idx;
  idx.weight = store.add(prefix + ".weight", std::move(w));
  idx.bias = store.add(prefix + ".bias", std::move(b));
  return idx;
}

inline NormIdx add_norm(ParamStore& store, const std::string& prefix, std::size_t d) {
  NormIdx idx;
  idx.gain = store.add(prefix + ".gain", Tensor({d}, 1.0));
  idx.bias = store.add(prefix + ".bias", Tensor({d}, 0.0));
  return idx;
}

inline AttentionParams add_attention(ParamStore& store, const std::string& prefix, std::size_t features,
                                     std::size_t norm_width, std::size_t heads, Rng& rng) {
  if (heads == 0 || features % heads != 0)
    throw ConfigError(prefix + ": head count " + std::to_string(heads) + " does not divide feature width " +
                      std::to_string(features));
  AttentionParams p;
  p.q = add_linear(store, prefix + ".q", features, features, rng);
  p.k = add_linear(store, prefix + ".k", features, features, rng);
  p.v = add_linear(store, prefix + ".v", features, features, rng);
  p.norm = add_norm(store, prefix + ".norm", norm_width);
  p.heads = heads;
  return p;
}

inline MlpBranch add_mlp_branch(ParamStore& store, const std::string& prefix, std::size_t d, Rng& rng) {
  MlpBranch m;
  m.fc1 = add_linear(store, prefix + ".fc1", d, d, rng);
  m.fc2 = add_linear(store, prefix + ".fc2", d, d, rng);
  m.norm = add_norm(store, prefix + ".norm", d);
  return m;
}

/// Geometry of a TVA block's input.
struct TvaShape {
  std::size_t n_vars = 1;
  std::size_t tokens = 1; ///< C for the 3D block; unused (1) for the 2D block
  std::size_t width = 1;  ///< D
};

inline TvaParams add_tva_3d(ParamStore& store, const std::string& prefix, TvaShape s, std::size_t heads,
                            VarAxisMode mode, bool mlp_temporal, Rng& rng) {
  TvaParams p;
  p.temporal = add_attention(store, prefix + ".temporal", s.width, s.width, heads, rng);
  const std::size_t var_features = mode == VarAxisMode::variables ? s.width : s.n_vars;
  p.variable = add_attention(store, prefix + ".variable", var_features, s.width, heads, rng);
  if (mlp_temporal) p.temporal_mlp = add_mlp_branch(store, prefix + ".temporal_mlp", s.width, rng);
  p.fuse_norm = add_norm(store, prefix + ".fuse_norm", s.width);
  p.fuse = add_linear(store, prefix + ".fuse", s.tokens * s.width, s.width, rng);
  return p;
}

/// The 2D variable branch runs single-head: its feature axis is the variable
/// axis, and splitting it would tie heads to particular variables.
inline TvaParams add_tva_2d(ParamStore& store, const std::string& prefix, TvaShape s, std::size_t heads,
                            bool mlp_temporal, Rng& rng) {
  TvaParams p;
  p.temporal = add_attention(store, prefix + ".temporal", s.width, s.width, heads, rng);
  p.variable = add_attention(store, prefix + ".variable", s.width, s.width, 1, rng);
  if (mlp_temporal) p.temporal_mlp = add_mlp_branch(store, prefix + ".temporal_mlp", s.width, rng);
  p.fuse_norm = add_norm(store, prefix + ".fuse_norm", s.width);
  p.fuse = add_linear(store, prefix + ".fuse", s.width, s.width, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Building blocks

namespace detail {

inline Var linear_of(ForwardContext& ctx, const Var& x, LinearIdx idx) {
  return linear(x, ctx.leaf(idx.weight), ctx.leaf(idx.bias));
}

inline Var norm_of(ForwardContext& ctx, const Var& x, NormIdx idx) {
  return layer_norm(x, ctx.leaf(idx.gain), ctx.leaf(idx.bias));
}

inline std::vector<std::size_t> identity_axes(std::size_t r) {
  std::vector<std::size_t> a(r);
  for (std::size_t i = 0; i < r; ++i) a[i] = i;
  return a;
}

/// Axis permutation swapping two axes.
inline std::vector<std::size_t> swap_axes(std::size_t rank, std::size_t i, std::size_t j) {
  auto a = identity_axes(rank);
  std::swap(a[i], a[j]);
  return a;
}

/// softmax(q·kᵀ·scale)·v over [..., T, d] operands.
inline Var attend(ForwardContext& ctx, const Var& q, const Var& k, const Var& v, double factor,
                  std::string_view tag) {
  Var logits = matmul(q, transpose_last2(k));
  if (factor != 1.0) logits = scale(logits, factor);
  Var probs = softmax_last(logits);
  if (ctx.trace) ctx.trace->entries.push_back({std::string(tag), logits.value(), probs.value()});
  if (ctx.training && ctx.dropout > 0.0) probs = dropout(probs, ctx.dropout, true, *ctx.rng);
  return matmul(probs, v);
}

/// [..., T, F] -> [..., h, T, F/h]
inline Var split_heads(const Var& x, std::size_t heads) {
  const Shape& s = x.shape();
  const std::size_t r = s.size();
  Shape split(s.begin(), s.end() - 1);
  split.push_back(heads);
  split.push_back(s.back() / heads);
  // [..., T, h, dh] -> [..., h, T, dh]
  return permute(reshape(x, split), swap_axes(r + 1, r - 2, r - 1));
}

inline Var merge_heads(const Var& x) {
  const Shape& s = x.shape();
  const std::size_t r = s.size();
  Var y = permute(x, swap_axes(r, r - 3, r - 2));
  Shape merged(y.shape().begin(), y.shape().end() - 2);
  merged.push_back(s[r - 3] * s[r - 1]);
  return reshape(y, merged);
}

inline Var multi_head(ForwardContext& ctx, const Var& q, const Var& k, const Var& v, std::size_t heads,
                      bool scaled, std::string_view tag) {
  const std::size_t features = q.shape().back();
  if (heads == 0 || features % heads != 0)
    throw ConfigError("head count " + std::to_string(heads) + " does not divide feature width " +
                      std::to_string(features));
  const std::size_t dk = features / heads;
  const double s = scaled ? 1.0 / std::sqrt(static_cast<double>(dk)) : 1.0;
  if (heads == 1) return attend(ctx, q, k, v, s, tag);
  return merge_heads(attend(ctx, split_heads(q, heads), split_heads(k, heads), split_heads(v, heads), s, tag));
}

inline Var self_attention(ForwardContext& ctx, const Var& x, const AttentionParams& p, bool scaled,
                          std::string_view tag) {
  Var q = linear_of(ctx, x, p.q);
  Var k = linear_of(ctx, x, p.k);
  Var v = linear_of(ctx, x, p.v);
  return multi_head(ctx, q, k, v, p.heads, scaled, tag);
}

inline void require_rank(const Var& x, std::size_t min_rank, const char* what) {
  if (x.shape().size() < min_rank)
    throw DimensionError(std::string(what) + ": input rank too small " + shape_str(x.shape()));
}

} // namespace detail

/// Attention over the C subsequence tokens of each variable; residual + layer norm over D.
inline Var temporal_attention_3d(ForwardContext& ctx, const Var& x, const AttentionParams& p,
                                 std::string_view tag = "temporal") {
  detail::require_rank(x, 3, "temporal_attention_3d");
  Var att = detail::self_attention(ctx, x, p, ctx.scale_temporal, tag);
  return detail::norm_of(ctx, add(att, x), p.norm);
}

/// Scaled attention across variables (mode=variables) or across subsequences with
/// the variable axis as features (mode=subsequences); residual + layer norm over D.
inline Var variable_attention_3d(ForwardContext& ctx, const Var& x, const AttentionParams& p, VarAxisMode mode,
                                 std::string_view tag = "variable") {
  detail::require_rank(x, 3, "variable_attention_3d");
  const std::size_t r = x.shape().size();
  Var att;
  if (mode == VarAxisMode::variables) {
    // [..., N, C, D] -> [..., C, N, D]
    const auto axes = detail::swap_axes(r, r - 3, r - 2);
    att = permute(detail::self_attention(ctx, permute(x, axes), p, true, tag), axes);
  } else {
    // [..., N, C, D] -> [..., D, C, N]
    const auto axes = detail::swap_axes(r, r - 3, r - 1);
    att = permute(detail::self_attention(ctx, permute(x, axes), p, true, tag), axes);
  }
  return detail::norm_of(ctx, add(att, x), p.norm);
}

inline Var temporal_mlp(ForwardContext& ctx, const Var& x, const MlpBranch& m) {
  Var h = relu(detail::linear_of(ctx, x, m.fc1));
  h = detail::linear_of(ctx, h, m.fc2);
  return detail::norm_of(ctx, add(h, x), m.norm);
}

/// layer_norm(ta + va) over D, flatten (C, D), shared C·D → D projection.
inline Var tva_fuse_3d(ForwardContext& ctx, const Var& ta, const std::optional<Var>& va, const TvaParams& p) {
  if (va && va->shape() != ta.shape())
    throw DimensionError("tva_fuse_3d: " + shape_str(ta.shape()) + " vs " + shape_str(va->shape()));
  Var s = va ? add(ta, *va) : ta;
  s = detail::norm_of(ctx, s, p.fuse_norm);
  const Shape& sh = s.shape();
  Shape flat(sh.begin(), sh.end() - 2);
  flat.push_back(sh[sh.size() - 2] * sh.back());
  Var out = detail::linear_of(ctx, reshape(s, flat), p.fuse);
  if (ctx.training && ctx.dropout > 0.0) out = dropout(out, ctx.dropout, true, *ctx.rng);
  return out;
}

inline void check_ablation(const BranchAblation& a) {
  if (a.ta && a.va) throw ConfigError("cannot ablate both temporal and variable attention");
}

/// Temporal and variable branches run side by side on the same input, then fuse.
inline Var tva_block_3d(ForwardContext& ctx, const Var& x, const TvaParams& p, VarAxisMode mode,
                        BranchAblation ablate, std::string_view tag = "tva") {
  check_ablation(ablate);
  detail::require_rank(x, 3, "tva_block_3d");
  const std::string t(tag);
  Var ta;
  if (ablate.ta) {
    if (!p.temporal_mlp) throw ConfigError(t + ": temporal ablation needs MLP parameters");
    ta = temporal_mlp(ctx, x, *p.temporal_mlp);
  } else {
    ta = temporal_attention_3d(ctx, x, p.temporal, t + ".temporal");
  }
  std::optional<Var> va;
  if (!ablate.va) va = variable_attention_3d(ctx, x, p.variable, mode, t + ".variable");
  return tva_fuse_3d(ctx, ta, va, p);
}

/// Integration block on [..., N, D]: temporal branch attends across variables
/// with D features (unscaled); variable branch attends across the D positions
/// with the N variables as features (scaled).
inline Var tva_block_2d(ForwardContext& ctx, const Var& x, const TvaParams& p, BranchAblation ablate,
                        std::string_view tag = "tva_fusion") {
  check_ablation(ablate);
  detail::require_rank(x, 2, "tva_block_2d");
  const std::string t(tag);
  const std::size_t r = x.shape().size();

  Var ta;
  if (ablate.ta) {
    if (!p.temporal_mlp) throw ConfigError(t + ": temporal ablation needs MLP parameters");
    ta = temporal_mlp(ctx, x, *p.temporal_mlp);
  } else {
    Var att = detail::self_attention(ctx, x, p.temporal, ctx.scale_temporal, t + ".temporal");
    ta = detail::norm_of(ctx, add(att, x), p.temporal.norm);
  }

  Var s = ta;
  if (!ablate.va) {
    const auto axes = detail::swap_axes(r, r - 2, r - 1);
    Var q = permute(detail::linear_of(ctx, x, p.variable.q), axes);
    Var k = permute(detail::linear_of(ctx, x, p.variable.k), axes);
    Var v = permute(detail::linear_of(ctx, x, p.variable.v), axes);
    Var att = permute(detail::multi_head(ctx, q, k, v, 1, true, t + ".variable"), axes);
    s = add(ta, detail::norm_of(ctx, add(att, x), p.variable.norm));
  }
  s = detail::norm_of(ctx, s, p.fuse_norm);
  Var out = detail::linear_of(ctx, s, p.fuse);
  if (ctx.training && ctx.dropout > 0.0) out = dropout(out, ctx.dropout, true, *ctx.rng);
  return out;
}

} // namespace dsformer
