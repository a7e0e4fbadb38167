#pragma once

// Reverse-mode differentiation over the small operator set the forecaster needs.
// A forward pass builds a graph of Nodes; backward() walks it once in reverse
// topological order and accumulates into Parameter::grad.

#include "dsformer/errors.hpp"
#include "dsformer/rng.hpp"
#include "dsformer/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace dsformer {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  /// Bumped on every in-place update; graphs built before the bump are stale.
  std::uint64_t version = 0;
};

/// Named, ordered parameter collection. Insertion order is the canonical order
/// used by the optimizer and the checkpoint writer.
class ParamStore {
public:
  std::size_t add(std::string name, Tensor value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    const std::size_t id = params_.size();
    Tensor grad(value.shape());
    index_.emplace(name, id);
    params_.push_back(Parameter{std::move(name), std::move(value), std::move(grad), 0});
    return id;
  }

  Parameter& operator[](std::size_t id) { return params_.at(id); }
  const Parameter& operator[](std::size_t id) const { return params_.at(id); }

  Parameter& get(std::string_view name) { return params_.at(id_of(name)); }
  const Parameter& get(std::string_view name) const { return params_.at(id_of(name)); }

  std::size_t id_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("unknown parameter: " + std::string(name));
    return it->second;
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  auto begin() const noexcept { return params_.begin(); }
  auto end() const noexcept { return params_.end(); }

  /// Total number of scalar weights.
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
  }

private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;
  bool has_grad = false;
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  Parameter* param = nullptr;
  std::uint64_t param_version = 0;

  Tensor& grad_buffer() {
    if (!has_grad) {
      grad = Tensor(value.shape());
      has_grad = true;
    }
    return grad;
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

} // namespace detail

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool prev_;
};

/// Handle to a value in the computation graph.
class Var {
public:
  Var() = default;
  explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
  std::shared_ptr<detail::Node> node_;
};

inline Var constant(Tensor value) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

/// Leaf bound to a Parameter; gradients flow into p.grad.
inline Var param(Parameter& p) {
  auto n = std::make_shared<detail::Node>();
  n->value = p.value;
  n->param = &p;
  n->param_version = p.version;
  n->requires_grad = detail::grad_mode();
  return Var(std::move(n));
}

namespace detail {

inline Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (grad_mode()) {
    for (const auto& in : inputs)
      if (in.requires_grad()) n->requires_grad = true;
    if (n->requires_grad) {
      for (auto& in : inputs) n->parents.push_back(in.node());
      n->backward = std::move(bw);
    }
  }
  return Var(std::move(n));
}

inline void accumulate(Node& parent, const Tensor& delta) {
  if (!parent.requires_grad) return;
  auto& g = parent.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

/// c[m×p] += op(a)·op(b). With ta, a is stored k×m; with tb, b is stored p×k.
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t p, bool ta, bool tb) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = ta ? a[kk * m + i] : a[i * k + kk];
      if (av == 0.0) continue;
      if (tb) {
        for (std::size_t j = 0; j < p; ++j) crow[j] += av * b[j * k + kk];
      } else {
        const double* brow = b + kk * p;
        for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape())
    throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return detail::make_result(std::move(out), {a, b}, [](detail::Node& n) {
    detail::accumulate(*n.parents[0], n.grad);
    detail::accumulate(*n.parents[1], n.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  if (a.shape() != b.shape())
    throw DimensionError("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return detail::make_result(std::move(out), {a, b}, [](detail::Node& n) {
    detail::accumulate(*n.parents[0], n.grad);
    if (n.parents[1]->requires_grad) {
      auto& g = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

/// a + bias, bias broadcast along the last axis.
inline Var add_bias(const Var& a, const Var& bias) {
  const std::size_t d = a.shape().empty() ? 0 : a.shape().back();
  if (bias.shape() != Shape{d})
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs input " + shape_str(a.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.value()[i % d];
  return detail::make_result(std::move(out), {a, bias}, [d](detail::Node& n) {
    detail::accumulate(*n.parents[0], n.grad);
    if (n.parents[1]->requires_grad) {
      auto& g = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i % d] += n.grad[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v *= s;
  return detail::make_result(std::move(out), {a}, [s](detail::Node& n) {
    if (!n.parents[0]->requires_grad) return;
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
  });
}

inline Var relu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v = v > 0.0 ? v : 0.0;
  return detail::make_result(std::move(out), {a}, [](detail::Node& n) {
    if (!n.parents[0]->requires_grad) return;
    auto& g = n.parents[0]->grad_buffer();
    const auto& x = n.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) g[i] += n.grad[i];
  });
}

inline Var sum_all(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return detail::make_result(Tensor({}, std::vector<double>{s}), {a}, [](detail::Node& n) {
    if (!n.parents[0]->requires_grad) return;
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Shape

inline Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return detail::make_result(std::move(out), {a}, [](detail::Node& n) {
    detail::accumulate(*n.parents[0], n.grad);
  });
}

inline Var permute(const Var& a, std::vector<std::size_t> axes) {
  Tensor out = permute(a.value(), axes);
  std::vector<std::size_t> inverse(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inverse[axes[i]] = i;
  return detail::make_result(std::move(out), {a}, [inverse](detail::Node& n) {
    if (!n.parents[0]->requires_grad) return;
    detail::accumulate(*n.parents[0], permute(n.grad, inverse));
  });
}

/// Swap the two trailing axes.
inline Var transpose_last2(const Var& a) {
  const std::size_t r = a.shape().size();
  if (r < 2) throw DimensionError("transpose_last2 needs rank >= 2, got " + shape_str(a.shape()));
  std::vector<std::size_t> axes(r);
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[r - 1], axes[r - 2]);
  return permute(a, std::move(axes));
}

// ---------------------------------------------------------------------------
// Linear algebra

/// a[..., M, K] × b[..., K, P]. A rank-2 b is shared across all leading axes of a.
inline Var matmul(const Var& a, const Var& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  auto fail = [&] {
    throw DimensionError("matmul: cannot multiply " + shape_str(as) + " by " + shape_str(bs));
  };
  if (as.size() < 2 || bs.size() < 2) fail();
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t kb = bs[bs.size() - 2];
  const std::size_t p = bs.back();
  if (k != kb) fail();

  const bool shared_b = bs.size() == 2;
  if (!shared_b && (as.size() != bs.size() || !std::equal(as.begin(), as.end() - 2, bs.begin()))) fail();

  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(p);
  Tensor out(out_shape);
  const std::size_t batch = shape_numel(Shape(as.begin(), as.end() - 2));

  if (shared_b) {
    detail::gemm_acc(a.value().data().data(), b.value().data().data(), out.data().data(), batch * m, k, p,
                     false, false);
  } else {
    for (std::size_t t = 0; t < batch; ++t)
      detail::gemm_acc(a.value().data().data() + t * m * k, b.value().data().data() + t * k * p,
                       out.data().data() + t * m * p, m, k, p, false, false);
  }

  return detail::make_result(std::move(out), {a, b}, [=](detail::Node& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    const double* dc = n.grad.data().data();
    if (shared_b) {
      const std::size_t rows = batch * m;
      if (pa.requires_grad)
        detail::gemm_acc(dc, pb.value.data().data(), pa.grad_buffer().data().data(), rows, p, k, false, true);
      if (pb.requires_grad)
        detail::gemm_acc(pa.value.data().data(), dc, pb.grad_buffer().data().data(), k, rows, p, true, false);
      return;
    }
    for (std::size_t t = 0; t < batch; ++t) {
      if (pa.requires_grad)
        detail::gemm_acc(dc + t * m * p, pb.value.data().data() + t * k * p,
                         pa.grad_buffer().data().data() + t * m * k, m, p, k, false, true);
      if (pb.requires_grad)
        detail::gemm_acc(pa.value.data().data() + t * m * k, dc + t * m * p,
                         pb.grad_buffer().data().data() + t * k * p, k, m, p, true, false);
    }
  });
}

/// Affine map along the last axis with weight [Din, Dout] and bias [Dout].
inline Var linear(const Var& x, const Var& weight, const Var& bias) {
  if (weight.shape().size() != 2 || x.shape().empty() || x.shape().back() != weight.shape()[0])
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  const Shape& xs = x.shape();
  if (xs.size() == 1) {
    Var row = reshape(x, {1, xs[0]});
    return reshape(add_bias(matmul(row, weight), bias), {weight.shape()[1]});
  }
  return add_bias(matmul(x, weight), bias);
}

// ---------------------------------------------------------------------------
// Normalization

/// Max-subtracted softmax over the last axis.
inline Tensor softmax_last(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) throw DimensionError("softmax over empty axis");
  const std::size_t d = x.shape().back();
  Tensor out(x.shape());
  for (std::size_t base = 0; base < x.size(); base += d) {
    double mx = x[base];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, x[base + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double e = std::exp(x[base + j] - mx);
      out[base + j] = e;
      sum += e;
    }
    for (std::size_t j = 0; j < d; ++j) out[base + j] /= sum;
  }
  return out;
}

inline Var softmax_last(const Var& x) {
  Tensor out = softmax_last(x.value());
  const std::size_t d = out.shape().back();
  return detail::make_result(std::move(out), {x}, [d](detail::Node& n) {
    if (!n.parents[0]->requires_grad) return;
    auto& g = n.parents[0]->grad_buffer();
    const auto& y = n.value;
    for (std::size_t base = 0; base < y.size(); base += d) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += n.grad[base + j] * y[base + j];
      for (std::size_t j = 0; j < d; ++j) g[base + j] += y[base + j] * (n.grad[base + j] - dot);
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

/// g ⊙ (x − mean)/sqrt(var + eps) + b over the last axis, population variance.
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = kLayerNormEps) {
  if (!(eps > 0.0)) throw ConfigError("layer_norm eps must be positive");
  const Shape& xs = x.shape();
  if (xs.empty()) throw DimensionError("layer_norm on a scalar");
  const std::size_t d = xs.back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + " vs input " + shape_str(xs));

  const Tensor& xv = x.value();
  Tensor out(xs);
  Tensor xhat(xs);
  std::vector<double> rstd(xv.size() / d);
  for (std::size_t s = 0, base = 0; base < xv.size(); ++s, base += d) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xv[base + j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv[base + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    rstd[s] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[base + j] = (xv[base + j] - mean) * rstd[s];
      out[base + j] = gain.value()[j] * xhat[base + j] + bias.value()[j];
    }
  }

  return detail::make_result(std::move(out), {x, gain, bias},
                             [d, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& n) {
    auto& px = *n.parents[0];
    auto& pg = *n.parents[1];
    auto& pb = *n.parents[2];
    const Tensor& g = pg.value;
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t s = 0, base = 0; base < n.grad.size(); ++s, base += d) {
      if (pg.requires_grad || pb.requires_grad) {
        for (std::size_t j = 0; j < d; ++j) {
          if (pg.requires_grad) pg.grad_buffer()[j] += n.grad[base + j] * xhat[base + j];
          if (pb.requires_grad) pb.grad_buffer()[j] += n.grad[base + j];
        }
      }
      if (px.requires_grad) {
        double mean_dxh = 0.0;
        double mean_dxh_xh = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dxh = n.grad[base + j] * g[j];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xhat[base + j];
        }
        mean_dxh *= inv_d;
        mean_dxh_xh *= inv_d;
        auto& gx = px.grad_buffer();
        for (std::size_t j = 0; j < d; ++j) {
          const double dxh = n.grad[base + j] * g[j];
          gx[base + j] += rstd[s] * (dxh - mean_dxh - xhat[base + j] * mean_dxh_xh);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Regularization

/// Inverted dropout; identity when !training or p == 0.
inline Var dropout(const Var& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must be in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask(x.shape());
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
    out[i] *= mask[i];
  }
  return detail::make_result(std::move(out), {x}, [mask = std::move(mask)](detail::Node& n) {
    if (!n.parents[0]->requires_grad) return;
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += mask[i] * n.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Losses (target is a constant)

namespace detail {
inline void check_same(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}
} // namespace detail

inline Var mae_loss(const Var& y, const Tensor& target) {
  detail::check_same(y.shape(), target.shape(), "mae_loss");
  const double m = static_cast<double>(target.size());
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) s += std::abs(y.value()[i] - target[i]);
  return detail::make_result(Tensor({}, std::vector<double>{s / m}), {y}, [target, m](detail::Node& n) {
    auto& g = n.parents[0]->grad_buffer();
    const auto& yv = n.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double e = yv[i] - target[i];
      g[i] += n.grad[0] * (e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0)) / m;
    }
  });
}

inline Var mse_loss(const Var& y, const Tensor& target) {
  detail::check_same(y.shape(), target.shape(), "mse_loss");
  const double m = static_cast<double>(target.size());
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double e = y.value()[i] - target[i];
    s += e * e;
  }
  return detail::make_result(Tensor({}, std::vector<double>{s / m}), {y}, [target, m](detail::Node& n) {
    auto& g = n.parents[0]->grad_buffer();
    const auto& yv = n.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0] * 2.0 * (yv[i] - target[i]) / m;
  });
}

/// w·mean|y − t| + (1 − w)·mean (y − t)².
inline Var composite_loss(const Var& y, const Tensor& target, double w_l1) {
  detail::check_same(y.shape(), target.shape(), "composite_loss");
  if (!(w_l1 >= 0.0 && w_l1 <= 1.0)) throw ConfigError("loss weight must be in [0, 1], got " + std::to_string(w_l1));
  const double m = static_cast<double>(target.size());
  double sa = 0.0;
  double ss = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double e = y.value()[i] - target[i];
    sa += std::abs(e);
    ss += e * e;
  }
  const double value = w_l1 * (sa / m) + (1.0 - w_l1) * (ss / m);
  return detail::make_result(Tensor({}, std::vector<double>{value}), {y}, [target, m, w_l1](detail::Node& n) {
    auto& g = n.parents[0]->grad_buffer();
    const auto& yv = n.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double e = yv[i] - target[i];
      const double sgn = e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
      g[i] += n.grad[0] * (w_l1 * sgn + (1.0 - w_l1) * 2.0 * e) / m;
    }
  });
}

// ---------------------------------------------------------------------------

/// Accumulates d(loss)/d(param) into every Parameter reachable from loss.
/// A graph may be differentiated once; parameters must not change in between.
inline void backward(const Var& loss) {
  if (!loss.node()) throw IntegrityError("backward on an empty Var");
  if (loss.value().size() != 1) throw DimensionError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // owning pointers: clearing parents below must not free nodes still queued
  std::vector<std::shared_ptr<detail::Node>> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      std::shared_ptr<detail::Node> parent = node->parents[next++];
      if (parent->requires_grad && seen.insert(parent.get()).second) stack.emplace_back(std::move(parent), 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (const auto& node : order) {
    if (node->consumed) throw IntegrityError("graph was already differentiated");
    if (node->param && node->param->version != node->param_version)
      throw IntegrityError("parameter '" + node->param->name + "' changed after the graph was built");
  }

  auto* root = loss.node().get();
  root->grad_buffer().fill(0.0);
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = it->get();
    if (node->has_grad) {
      if (node->backward) {
        node->backward(*node);
      } else if (node->param) {
        require_finite(node->grad, "gradient of " + node->param->name);
        auto& g = node->param->grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += node->grad[i];
      }
    }
    node->consumed = true;
    node->backward = nullptr;
    node->parents.clear();
    node->grad = Tensor();
    node->has_grad = false;
  }
}

} // namespace dsformer
