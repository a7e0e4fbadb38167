#pragma once

// Mini-batch training, evaluation and the multi-seed experiment runner.

#include "dsformer/data.hpp"
#include "dsformer/log.hpp"
#include "dsformer/model.hpp"
#include "dsformer/optim.hpp"
#include "dsformer/registry.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace dsformer {

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 100;
  LrSchedule schedule;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  /// Stop after this many epochs without a val improvement; 0 disables.
  std::size_t patience = 0;
  /// Global gradient-norm limit; 0 disables.
  double clip_norm = 0.0;
  /// Keep the final epoch's parameters instead of the best-val ones.
  bool select_last_epoch = false;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (clip_norm < 0.0) throw ConfigError("clip norm must be >= 0");
    schedule.validate();
  }
};

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<Metrics> val;
  double lr = 0.0;
  double seconds = 0.0;
  std::size_t clipped_steps = 0;
};

struct RunRecord {
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  Metrics test;
  bool failed = false;
  std::string error;

  double mean_epoch_seconds() const {
    if (epochs.empty()) return 0.0;
    double s = 0.0;
    for (const auto& e : epochs) s += e.seconds;
    return s / static_cast<double>(epochs.size());
  }
};

/// MSE and MAE over every window, variable and horizon step. Never touches
/// parameters or any training rng.
inline Metrics evaluate(const ModelParams& mp, const ModelConfig& cfg, const WindowSet& windows,
                        std::size_t chunk = 64) {
  if (windows.empty()) throw ConfigError("cannot evaluate on an empty window set");
  double se = 0.0, ae = 0.0;
  std::size_t count = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < windows.size(); start += chunk) {
    idx.resize(std::min(chunk, windows.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    auto [x, y] = windows.batch(idx);
    Tensor pred = predict(mp, cfg, x);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double e = pred[i] - y[i];
      se += e * e;
      ae += std::abs(e);
    }
    count += pred.size();
  }
  return Metrics{se / static_cast<double>(count), ae / static_cast<double>(count)};
}

inline std::vector<Tensor> snapshot(const ParamStore& store) {
  std::vector<Tensor> out;
  out.reserve(store.size());
  for (const auto& p : store) out.push_back(p.value);
  return out;
}

inline void restore(ParamStore& store, const std::vector<Tensor>& values) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    store[i].value = values[i];
    ++store[i].version;
  }
}

/// Rounds every parameter to the nearest 32-bit float, the checkpoint storage precision.
inline void round_to_f32(ParamStore& store) {
  for (auto& p : store) {
    for (auto& v : p.value.storage()) v = static_cast<double>(static_cast<float>(v));
    ++p.version;
  }
}

/// Trains `mp` in place. With a non-empty val set the parameters of the best
/// val-MSE epoch are restored at the end (unless tc.select_last_epoch).
inline RunRecord train(const ModelConfig& cfg, ModelParams& mp, const WindowSet& train_windows,
                       const WindowSet& val_windows, const TrainConfig& tc, Rng& rng) {
  cfg.validate();
  tc.validate();
  if (train_windows.empty()) throw ConfigError("training window set is empty");
  if (train_windows.n_vars() != cfg.n_vars || train_windows.history() != cfg.history ||
      train_windows.horizon() != cfg.horizon)
    throw DimensionError("training windows do not match the model configuration");

  RunRecord rec;
  AdamState adam = AdamState::for_params(mp.store);
  std::vector<std::size_t> order(train_windows.size());
  std::iota(order.begin(), order.end(), 0);
  const bool use_val = !val_windows.empty() && !tc.select_last_epoch;
  double best = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_values;
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord er;
    er.epoch = epoch;
    er.lr = lr_at(tc.schedule, static_cast<int>(epoch));
    std::shuffle(order.begin(), order.end(), rng.engine());

    double loss_sum = 0.0;
    std::size_t batches = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size, ++batches) {
      idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                 order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + tc.batch_size)));
      auto [x, y] = train_windows.batch(idx);
      try {
        Var l = loss(forward_graph(mp, cfg, x, ForwardOptions{true, &rng, nullptr}), y, cfg.w_l1);
        const double value = l.value()[0];
        if (!std::isfinite(value)) throw NumericError("loss is " + std::to_string(value));
        backward(l);
        loss_sum += value;
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches) + ": " +
                           e.what());
      }
      if (tc.clip_norm > 0.0 && clip_grad_norm(mp.store, tc.clip_norm)) ++er.clipped_steps;
      adam_step(mp.store, adam, er.lr);
    }
    er.train_loss = loss_sum / static_cast<double>(batches);
    if (er.clipped_steps > 0)
      warn("epoch " + std::to_string(epoch) + ": gradient clipped in " + std::to_string(er.clipped_steps) +
           " of " + std::to_string(batches) + " steps");
    if (!val_windows.empty()) er.val = evaluate(mp, cfg, val_windows);
    er.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.epochs.push_back(er);

    if (use_val) {
      if (er.val->mse < best) {
        best = er.val->mse;
        best_values = snapshot(mp.store);
        rec.best_epoch = epoch;
        since_best = 0;
      } else if (tc.patience > 0 && ++since_best >= tc.patience) {
        break;
      }
    }
  }
  if (use_val && !best_values.empty()) {
    restore(mp.store, best_values);
  } else {
    rec.best_epoch = rec.epochs.back().epoch;
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Data preparation

struct PreparedData {
  NormStats stats;
  WindowSet train, val, test;
};

/// Splits chronologically, fits z-score statistics on the training rows only and
/// builds stride-1 windows. With `borrow_history`, val and test windows may take
/// their input from the H rows before the split; targets always lie inside it.
/// `fixed_stats` replaces the fitted statistics (evaluating a saved model).
inline PreparedData prepare_data(const TimeSeriesFrame& frame, SplitRatios ratios, std::size_t h, std::size_t l,
                                 bool borrow_history = true, const NormStats* fixed_stats = nullptr) {
  frame.validate();
  SplitFrames parts = chrono_split(frame, ratios);
  PreparedData out;
  out.stats = fixed_stats ? *fixed_stats : zscore_fit(parts.train);
  const TimeSeriesFrame normed = zscore_apply(frame, out.stats);
  const std::size_t end = parts.test_begin + parts.test.timesteps();
  auto section = [&](std::size_t begin, std::size_t stop) {
    const std::size_t from = borrow_history ? begin - std::min(begin, h) : begin;
    return normed.slice(from, stop);
  };
  out.train = WindowSet(normed.slice(0, parts.val_begin), h, l);
  const TimeSeriesFrame val = section(parts.val_begin, parts.test_begin);
  if (val.timesteps() >= h + l) {
    out.val = WindowSet(val, h, l);
  } else {
    warn("validation split too short for H=" + std::to_string(h) + ", L=" + std::to_string(l) +
         "; keeping the last epoch");
  }
  out.test = WindowSet(section(parts.test_begin, end), h, l);
  return out;
}

// ---------------------------------------------------------------------------
// Multi-seed experiments

struct ExperimentResult {
  std::vector<RunRecord> runs;
  std::vector<ModelParams> models; ///< one per successful seed, 32-bit rounded
  NormStats stats;
  Metrics mean;
  double mean_epoch_seconds = 0.0;
  bool failed = false;
  std::string error;
};

/// Distinct stream for shuffling and dropout, independent of the init stream.
inline std::uint64_t train_stream_seed(std::uint64_t seed) { return seed * 0x9E3779B97F4A7C15ULL + 0x5851F42D4C957F2DULL; }

/// Trains and evaluates one model per seed. Parameters are rounded to 32-bit
/// before testing so a saved checkpoint reproduces the reported metrics exactly.
/// A failing seed marks the experiment failed; completed seeds are kept.
inline ExperimentResult run_experiment(const PreparedData& data, const ModelConfig& cfg, const TrainConfig& tc) {
  cfg.validate();
  tc.validate();
  ExperimentResult res;
  res.stats = data.stats;
  double mse = 0.0, mae = 0.0, secs = 0.0;
  std::size_t ok = 0;
  for (std::uint64_t seed : tc.seeds) {
    ModelParams mp = init_params(cfg, seed);
    Rng rng(train_stream_seed(seed));
    RunRecord rec;
    try {
      rec = train(cfg, mp, data.train, data.val, tc, rng);
      rec.seed = seed;
      round_to_f32(mp.store);
      rec.test = evaluate(mp, cfg, data.test);
    } catch (const std::exception& e) {
      rec.seed = seed;
      rec.failed = true;
      rec.error = e.what();
      res.failed = true;
      res.error = "seed " + std::to_string(seed) + ": " + e.what();
      res.runs.push_back(std::move(rec));
      break;
    }
    mse += rec.test.mse;
    mae += rec.test.mae;
    secs += rec.mean_epoch_seconds();
    ++ok;
    res.runs.push_back(std::move(rec));
    res.models.push_back(std::move(mp));
  }
  if (ok > 0) {
    res.mean = Metrics{mse / static_cast<double>(ok), mae / static_cast<double>(ok)};
    res.mean_epoch_seconds = secs / static_cast<double>(ok);
  }
  return res;
}

inline ExperimentResult run_experiment(const TimeSeriesFrame& frame, SplitRatios ratios, const ModelConfig& cfg,
                                       const TrainConfig& tc) {
  return run_experiment(prepare_data(frame, ratios, cfg.history, cfg.horizon), cfg, tc);
}

// ---------------------------------------------------------------------------
// Ablation suite

struct AblationRow {
  std::string variant;
  ExperimentResult result;
};

inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v{"full", "ps", "ds", "as", "ta", "va"};
  return v;
}

/// Runs the full model and the five component-removal variants on identical data and seeds.
inline std::vector<AblationRow> ablation_suite(const PreparedData& data, ModelConfig base, const TrainConfig& tc) {
  base.ablate = {};
  base.validate();
  std::vector<AblationRow> rows;
  for (const auto& name : ablation_variants()) {
    ModelConfig cfg = base;
    cfg.ablate = parse_ablation(name);
    rows.push_back(AblationRow{name, run_experiment(data, cfg, tc)});
    rows.back().result.models.clear();
  }
  return rows;
}

// ---------------------------------------------------------------------------
// History-length × sampling-interval sweep

struct SweepGrid {
  std::vector<std::size_t> intervals{2, 3, 4, 6};
  std::vector<std::size_t> histories{96, 192, 336};
  std::vector<std::size_t> horizons{96, 192, 336, 720};
};

struct SweepCell {
  std::size_t history = 0, interval = 0, horizon = 0, heads = 0;
  double w_l1 = 0.0;
  bool skipped = false;
  std::string reason;
  Metrics mean;
  std::vector<Metrics> per_seed;
};

/// Every (H, C, L) cell, sorted by (L, C, H). Heads and loss weight follow the
/// per-horizon defaults; infeasible cells are reported as skipped.
inline std::vector<SweepCell> sweep(const TimeSeriesFrame& frame, SplitRatios ratios, const ModelConfig& base,
                                    const TrainConfig& tc, SweepGrid grid) {
  auto sorted_unique = [](std::vector<std::size_t> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
  };
  grid.intervals = sorted_unique(grid.intervals);
  grid.histories = sorted_unique(grid.histories);
  grid.horizons = sorted_unique(grid.horizons);

  std::vector<SweepCell> cells;
  for (std::size_t l : grid.horizons) {
    const HorizonDefaults hd = horizon_defaults(l);
    for (std::size_t c : grid.intervals)
      for (std::size_t h : grid.histories) {
        SweepCell cell{h, c, l, hd.heads, hd.w_l1, false, {}, {}, {}};
        ModelConfig cfg = base;
        cfg.n_vars = frame.n_vars();
        cfg.history = h;
        cfg.interval = c;
        cfg.horizon = l;
        cfg.heads = hd.heads;
        cfg.w_l1 = hd.w_l1;
        try {
          cfg.validate();
        } catch (const ConfigError& e) {
          cell.skipped = true;
          cell.reason = e.what();
          cells.push_back(cell);
          continue;
        }
        ExperimentResult r = run_experiment(prepare_data(frame, ratios, h, l), cfg, tc);
        if (r.failed) throw NumericError("sweep cell H=" + std::to_string(h) + " C=" + std::to_string(c) +
                                         " L=" + std::to_string(l) + " failed: " + r.error);
        cell.mean = r.mean;
        for (const auto& run : r.runs) cell.per_seed.push_back(run.test);
        cells.push_back(cell);
      }
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Timing

struct BenchResult {
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  double mean_seconds = 0.0, min_seconds = 0.0, max_seconds = 0.0;
  std::vector<double> seconds;
};

/// Trains the first seed for tc.epochs and reports per-epoch wall-clock.
inline BenchResult bench(const PreparedData& data, const ModelConfig& cfg, const TrainConfig& tc) {
  tc.validate();
  ModelParams mp = init_params(cfg, tc.seeds.front());
  Rng rng(train_stream_seed(tc.seeds.front()));
  TrainConfig once = tc;
  once.patience = 0;
  RunRecord rec = train(cfg, mp, data.train, data.val, once, rng);
  BenchResult b;
  b.epochs = rec.epochs.size();
  b.batch_size = tc.batch_size;
  for (const auto& e : rec.epochs) b.seconds.push_back(e.seconds);
  b.mean_seconds = std::accumulate(b.seconds.begin(), b.seconds.end(), 0.0) / static_cast<double>(b.epochs);
  b.min_seconds = *std::min_element(b.seconds.begin(), b.seconds.end());
  b.max_seconds = *std::max_element(b.seconds.begin(), b.seconds.end());
  return b;
}

} // namespace dsformer
