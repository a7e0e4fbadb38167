#pragma once

// Double sampling: rearrange a length-H window into C rows of H/C values, once
// as stride-C interleaved phases (global view) and once as C contiguous chunks
// (local view). Both are lossless permutations of the input.

#include "dsformer/errors.hpp"
#include "dsformer/tensor.hpp"

#include <string>

namespace dsformer {

struct SampledPair {
  Tensor x_ds; ///< [..., C, H/C], row j = x[j], x[j+C], x[j+2C], ...
  Tensor x_ps; ///< [..., C, H/C], row j = x[j·H/C .. (j+1)·H/C)
  std::size_t interval = 1;
};

inline void validate_interval(std::size_t h, std::size_t c) {
  if (h < 1 || c < 1)
    throw ConfigError("history length and sampling interval must be >= 1 (H=" + std::to_string(h) +
                      ", C=" + std::to_string(c) + ")");
  if (h % c != 0)
    throw ConfigError("sampling interval C=" + std::to_string(c) + " does not divide history length H=" +
                      std::to_string(h));
}

namespace detail {

// Shared driver: out[..., j, k] = x[..., src(j, k)].
template <typename SourceIndex>
Tensor resample(const Tensor& x, std::size_t c, SourceIndex src) {
  if (x.rank() < 1) throw DimensionError("sampling needs at least one axis");
  const std::size_t h = x.shape().back();
  validate_interval(h, c);
  const std::size_t d = h / c;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  out_shape.push_back(c);
  out_shape.push_back(d);
  Tensor out(out_shape);
  for (std::size_t base = 0; base < x.size(); base += h)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t k = 0; k < d; ++k) out[base + j * d + k] = x[base + src(j, k, c, d)];
  return out;
}

template <typename SourceIndex>
Tensor unsample(const Tensor& s, SourceIndex src) {
  if (s.rank() < 2) throw DimensionError("expected [..., C, H/C], got " + shape_str(s.shape()));
  const std::size_t c = s.shape()[s.rank() - 2];
  const std::size_t d = s.shape().back();
  const std::size_t h = c * d;
  Shape out_shape(s.shape().begin(), s.shape().end() - 2);
  out_shape.push_back(h);
  Tensor out(out_shape);
  for (std::size_t base = 0; base < s.size(); base += h)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t k = 0; k < d; ++k) out[base + src(j, k, c, d)] = s[base + j * d + k];
  return out;
}

inline std::size_t down_index(std::size_t j, std::size_t k, std::size_t c, std::size_t) { return j + k * c; }
inline std::size_t piece_index(std::size_t j, std::size_t k, std::size_t, std::size_t d) { return j * d + k; }

} // namespace detail

/// [..., H] → [..., C, H/C] with out[..., j, k] = x[..., j + k·C].
inline Tensor down_sample(const Tensor& x, std::size_t c) { return detail::resample(x, c, detail::down_index); }

/// [..., H] → [..., C, H/C] with out[..., j, k] = x[..., j·(H/C) + k].
inline Tensor piecewise_sample(const Tensor& x, std::size_t c) {
  return detail::resample(x, c, detail::piece_index);
}

inline SampledPair sample_pair(const Tensor& x, std::size_t c) {
  return SampledPair{down_sample(x, c), piecewise_sample(x, c), c};
}

/// Inverse of down_sample.
inline Tensor interleave(const Tensor& x_ds) { return detail::unsample(x_ds, detail::down_index); }

/// Inverse of piecewise_sample.
inline Tensor concatenate_segments(const Tensor& x_ps) { return detail::unsample(x_ps, detail::piece_index); }

} // namespace dsformer
