#pragma once

// Dataset ingestion, chronological splitting, z-score normalization and
// sliding-window construction.

#include "dsformer/errors.hpp"
#include "dsformer/log.hpp"
#include "dsformer/rng.hpp"
#include "dsformer/tensor.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dsformer {

/// T×N multivariate series, row-major by timestep.
struct TimeSeriesFrame {
  Tensor values; ///< [T, N]
  std::vector<std::string> names;
  std::string granularity;
  std::vector<std::string> timestamps; ///< empty or length T

  std::size_t timesteps() const { return values.rank() == 2 ? values.dim(0) : 0; }
  std::size_t n_vars() const { return values.rank() == 2 ? values.dim(1) : 0; }
  double at(std::size_t t, std::size_t var) const { return values[t * n_vars() + var]; }

  void validate() const {
    if (values.rank() != 2 || timesteps() < 1 || n_vars() < 1)
      throw FormatError("frame needs at least one timestep and one variable");
    if (names.size() != n_vars()) throw FormatError("frame has " + std::to_string(names.size()) + " names for " +
                                                    std::to_string(n_vars()) + " variables");
    if (std::set<std::string>(names.begin(), names.end()).size() != names.size())
      throw FormatError("variable names must be unique");
    if (!timestamps.empty() && timestamps.size() != timesteps())
      throw FormatError("timestamp count does not match timestep count");
    require_finite(values, "frame values");
  }

  /// Rows [begin, end).
  TimeSeriesFrame slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > timesteps()) throw DimensionError("frame slice out of range");
    const std::size_t n = n_vars();
    std::vector<double> data(values.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                             values.data().begin() + static_cast<std::ptrdiff_t>(end * n));
    TimeSeriesFrame out{Tensor({end - begin, n}, std::move(data)), names, granularity, {}};
    if (!timestamps.empty())
      out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                            timestamps.begin() + static_cast<std::ptrdiff_t>(end));
    return out;
  }
};

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

inline bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

inline bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

} // namespace detail

/// Parses CSV text: header row, optional leading "date" column, numeric cells.
inline TimeSeriesFrame parse_csv(std::string_view text, const std::string& source = "<csv>") {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == '\n') {
      std::string_view line = text.substr(start, i - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      lines.push_back(line);
      start = i + 1;
    }
  }
  while (!lines.empty() && detail::trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw FormatError(source + ": empty file");

  std::string_view header_line = lines[0];
  if (header_line.size() >= 3 && header_line.substr(0, 3) == "\xEF\xBB\xBF") header_line.remove_prefix(3);
  const auto header = detail::split_commas(header_line);
  const bool has_date = !header.empty() && detail::iequals(header[0], "date");
  const std::size_t first = has_date ? 1 : 0;
  if (header.size() <= first) throw FormatError(source + ": no value columns in header");

  TimeSeriesFrame frame;
  for (std::size_t c = first; c < header.size(); ++c) frame.names.emplace_back(header[c]);
  const std::size_t n = frame.names.size();
  std::vector<double> data;
  data.reserve((lines.size() - 1) * n);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto cells = detail::split_commas(lines[r]);
    if (cells.size() != header.size())
      throw ParseError(source + ": row " + std::to_string(r + 1) + " has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(header.size()));
    if (has_date) frame.timestamps.emplace_back(cells[0]);
    for (std::size_t c = first; c < cells.size(); ++c) {
      double v = 0.0;
      if (!detail::parse_double(cells[c], v))
        throw ParseError(source + ": non-numeric cell '" + std::string(cells[c]) + "' at row " +
                         std::to_string(r + 1) + ", column " + std::to_string(c + 1) + " (" +
                         std::string(header[c]) + ")");
      data.push_back(v);
    }
  }
  const std::size_t t = lines.size() - 1;
  if (t == 0) throw FormatError(source + ": header without data rows");
  frame.values = Tensor({t, n}, std::move(data));
  frame.validate();
  return frame;
}

inline TimeSeriesFrame load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_csv(text, path);
}

/// CSV with a header of variable names (no date column).
inline std::string to_csv(const Tensor& rows_by_vars, const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) out += (i ? "," : "") + names[i];
  out += '\n';
  const std::size_t n = names.size();
  char buf[64];
  for (std::size_t r = 0; r < rows_by_vars.dim(0); ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, rows_by_vars[r * n + c]);
      if (c) out += ',';
      out.append(buf, ptr);
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct SplitFrames {
  TimeSeriesFrame train, val, test;
  std::size_t val_begin = 0;  ///< absolute index of val[0]
  std::size_t test_begin = 0; ///< absolute index of test[0]
};

/// Contiguous chronological slices at floor(cumulative ratio × T).
inline SplitFrames chrono_split(const TimeSeriesFrame& frame, SplitRatios r) {
  if (!(r.train > 0 && r.val > 0 && r.test > 0)) throw ConfigError("split ratios must be positive");
  if (r.train + r.val + r.test > 1.0 + 1e-9) throw ConfigError("split ratios sum to more than 1");
  const std::size_t t = frame.timesteps();
  // The small nudge keeps exact products such as (0.7 + 0.1)·10 from flooring to 7.
  auto boundary = [t](double cum) {
    return std::min(t, static_cast<std::size_t>(std::floor(cum * static_cast<double>(t) + 1e-9)));
  };
  const std::size_t b1 = boundary(r.train);
  const std::size_t b2 = boundary(r.train + r.val);
  const std::size_t b3 = boundary(r.train + r.val + r.test);
  if (b1 == 0 || b2 == b1 || b3 == b2)
    throw ConfigError("split of T=" + std::to_string(t) + " leaves an empty partition (" + std::to_string(b1) +
                      ", " + std::to_string(b2 - b1) + ", " + std::to_string(b3 - b2) + ")");
  return SplitFrames{frame.slice(0, b1), frame.slice(b1, b2), frame.slice(b2, b3), b1, b2};
}

// ---------------------------------------------------------------------------
// Normalization

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std; ///< population std; zero-variance variables stored as 1
};

inline NormStats zscore_fit(const TimeSeriesFrame& train) {
  train.validate();
  const std::size_t t = train.timesteps();
  const std::size_t n = train.n_vars();
  NormStats s{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  for (std::size_t v = 0; v < n; ++v) {
    double m = 0.0;
    for (std::size_t i = 0; i < t; ++i) m += train.at(i, v);
    m /= static_cast<double>(t);
    double var = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
      const double c = train.at(i, v) - m;
      var += c * c;
    }
    var /= static_cast<double>(t);
    s.mean[v] = m;
    s.std[v] = std::sqrt(var);
    if (s.std[v] == 0.0) {
      warn("variable '" + train.names[v] + "' has zero variance on the training split; using std = 1");
      s.std[v] = 1.0;
    }
  }
  return s;
}

inline TimeSeriesFrame zscore_apply(const TimeSeriesFrame& frame, const NormStats& s) {
  const std::size_t n = frame.n_vars();
  if (s.mean.size() != n) throw DimensionError("norm stats cover " + std::to_string(s.mean.size()) +
                                               " variables, frame has " + std::to_string(n));
  TimeSeriesFrame out = frame;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = (out.values[i] - s.mean[i % n]) / s.std[i % n];
  return out;
}

inline TimeSeriesFrame zscore_invert(const TimeSeriesFrame& frame, const NormStats& s) {
  const std::size_t n = frame.n_vars();
  if (s.mean.size() != n) throw DimensionError("norm stats cover " + std::to_string(s.mean.size()) +
                                               " variables, frame has " + std::to_string(n));
  TimeSeriesFrame out = frame;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = out.values[i] * s.std[i % n] + s.mean[i % n];
  return out;
}

// ---------------------------------------------------------------------------
// Windows

struct WindowPair {
  Tensor x; ///< [N, H]
  Tensor y; ///< [N, L]
  std::size_t origin = 0;
};

/// Lazily materialized stride-s windows over a frame. Window i covers input rows
/// [i·s, i·s + H) and target rows [i·s + H, i·s + H + L).
class WindowSet {
public:
  WindowSet() = default;
  WindowSet(const TimeSeriesFrame& frame, std::size_t h, std::size_t l, std::size_t stride = 1)
      : n_(frame.n_vars()), t_(frame.timesteps()), h_(h), l_(l), stride_(stride) {
    if (h < 1 || l < 1 || stride < 1) throw ConfigError("window lengths and stride must be >= 1");
    if (t_ < h + l)
      throw ConfigError("series of T=" + std::to_string(t_) + " is shorter than H=" + std::to_string(h) +
                        " + L=" + std::to_string(l));
    count_ = (t_ - h - l) / stride + 1;
    // variable-major copy so each window row is contiguous
    series_ = permute(frame.values, {1, 0});
  }

  std::size_t size() const noexcept { return count_; }
  bool empty() const noexcept { return count_ == 0; }
  std::size_t n_vars() const noexcept { return n_; }
  std::size_t history() const noexcept { return h_; }
  std::size_t horizon() const noexcept { return l_; }

  WindowPair operator[](std::size_t i) const {
    auto [x, y] = batch(std::vector<std::size_t>{i});
    return WindowPair{x.reshaped({n_, h_}), y.reshaped({n_, l_}), i * stride_};
  }

  /// Stacks the listed windows into X [B, N, H] and Y [B, N, L].
  std::pair<Tensor, Tensor> batch(const std::vector<std::size_t>& idx) const {
    const std::size_t b = idx.size();
    Tensor x({b, n_, h_});
    Tensor y({b, n_, l_});
    for (std::size_t k = 0; k < b; ++k) {
      if (idx[k] >= count_) throw DimensionError("window index out of range");
      const std::size_t origin = idx[k] * stride_;
      for (std::size_t v = 0; v < n_; ++v) {
        const double* row = series_.data().data() + v * t_ + origin;
        std::copy(row, row + h_, x.data().data() + (k * n_ + v) * h_);
        std::copy(row + h_, row + h_ + l_, y.data().data() + (k * n_ + v) * l_);
      }
    }
    return {std::move(x), std::move(y)};
  }

private:
  std::size_t n_ = 0, t_ = 0, h_ = 0, l_ = 0, stride_ = 1, count_ = 0;
  Tensor series_; ///< [N, T]
};

inline WindowSet make_windows(const TimeSeriesFrame& frame, std::size_t h, std::size_t l, std::size_t stride = 1) {
  return WindowSet(frame, h, l, stride);
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Per-variable sinusoids of one period with variable-specific phase and
/// harmonic; with `mix`, a shared seasonal component dominates each variable so
/// the variables are strongly correlated. Gaussian noise on top.
/// The shared part uses harmonics 1 and 2, the per-variable part harmonics 3..5,
/// so the two are orthogonal over a full period when period > 10.
inline TimeSeriesFrame synth_seasonal(std::size_t n_vars, std::size_t t, std::size_t period, double noise_std,
                                      std::uint64_t seed, bool mix = true) {
  if (period < 2) throw ConfigError("period must be >= 2");
  if (n_vars < 1 || t < 1) throw ConfigError("synthetic frame needs n_vars >= 1 and t >= 1");
  Rng rng(seed);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double shared_phase = rng.uniform(0.0, two_pi);
  std::vector<double> phase(n_vars), amp(n_vars), offset(n_vars);
  std::vector<int> harmonic(n_vars);
  for (std::size_t v = 0; v < n_vars; ++v) {
    phase[v] = rng.uniform(0.0, two_pi);
    amp[v] = rng.uniform(0.5, 2.0);
    offset[v] = rng.uniform(-1.0, 1.0);
    harmonic[v] = 3 + static_cast<int>(v % 3);
  }
  const double w_shared = mix ? 0.9 : 0.0;
  const double w_own = mix ? std::sqrt(1.0 - 0.81) : 1.0;

  TimeSeriesFrame frame;
  frame.granularity = "synthetic";
  std::vector<double> data(t * n_vars);
  for (std::size_t i = 0; i < t; ++i) {
    // phase from (i mod period) keeps noiseless series exactly periodic
    const double u = two_pi * static_cast<double>(i % period) / static_cast<double>(period);
    const double shared = std::sin(u + shared_phase) + 0.5 * std::sin(2.0 * u + 2.0 * shared_phase);
    for (std::size_t v = 0; v < n_vars; ++v) {
      const double own = std::sin(harmonic[v] * u + phase[v]);
      double value = offset[v] + amp[v] * (w_shared * shared + w_own * own);
      if (noise_std > 0.0) value += rng.normal(0.0, noise_std);
      data[i * n_vars + v] = value;
    }
  }
  frame.values = Tensor({t, n_vars}, std::move(data));
  for (std::size_t v = 0; v < n_vars; ++v) frame.names.push_back("var" + std::to_string(v));
  return frame;
}

} // namespace dsformer
