#pragma once

// Command-line layer. Settings come from three sources with fixed precedence:
// explicit flags, then a `key = value` config file (--config), then registry
// defaults (per-dataset H and splits, per-horizon heads/C/w_l1). A key given
// twice in one source, or both --dataset and --csv in one source, is an error.
//
// Benchmark metrics (train, evaluate, ablate, sweep) are on the z-scored scale;
// predict writes forecasts in original units.

#include "dsformer/checkpoint.hpp"
#include "dsformer/registry.hpp"
#include "dsformer/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace dsformer {

inline constexpr std::string_view kMetricsSchema = "dsformer.metrics/1";
inline constexpr std::string_view kAblationSchema = "dsformer.ablation/1";
inline constexpr std::string_view kSweepSchema = "dsformer.sweep/1";
inline constexpr std::string_view kBenchSchema = "dsformer.bench/1";

/// Keys measured in wall-clock; excluded when comparing reruns.
inline const std::set<std::string>& timing_keys() {
  static const std::set<std::string> keys{"seconds", "mean_epoch_seconds", "min_seconds", "max_seconds"};
  return keys;
}

inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys{
      "dataset", "csv",        "split",  "history",        "horizon",        "interval",    "heads",
      "dropout", "var_attn",   "ablate", "seeds",          "epochs",         "batch",       "lr",
      "milestones", "gamma",   "w_l1",   "patience",       "clip_norm",      "decoder_hidden",
      "scale_temporal", "select_last", "out", "grid_c", "grid_h", "grid_l"};
  return keys;
}

inline std::string normalize_key(std::string key) {
  key = lower(std::string(detail::trim(key)));
  for (auto& ch : key)
    if (ch == '-') ch = '_';
  return key;
}

/// Settings from one source.
struct ConfigLayer {
  std::string origin;
  std::map<std::string, std::string> values;

  void set(const std::string& raw_key, const std::string& value) {
    const std::string key = normalize_key(raw_key);
    if (!config_keys().contains(key)) throw ConfigError(origin + ": unknown key '" + raw_key + "'");
    if (!values.emplace(key, value).second)
      throw ConfigError(origin + ": '" + key + "' is given more than once");
  }
  bool has(const std::string& key) const { return values.contains(key); }
};

/// `key = value` lines; `#` starts a comment.
inline ConfigLayer parse_config_text(std::string_view text, const std::string& origin) {
  ConfigLayer layer{origin, {}};
  std::istringstream in{std::string(text)};
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string_view body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = origin + ":" + std::to_string(no);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key(detail::trim(body.substr(0, eq)));
    const std::string value(detail::trim(body.substr(eq + 1)));
    if (key.empty() || value.empty()) throw ConfigError(where + ": expected 'key = value'");
    layer.origin = where;
    layer.set(key, value);
  }
  layer.origin = origin;
  return layer;
}

inline ConfigLayer parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text, path);
}

namespace detail {

inline std::size_t parse_size(const std::string& key, const std::string& s) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  return v;
}

inline double parse_real(const std::string& key, const std::string& s) {
  double v = 0.0;
  if (!parse_double(s, v)) throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

inline bool parse_flag(const std::string& key, const std::string& s) {
  const std::string v = lower(s);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto part : split_commas(s)) out.emplace_back(trim(part));
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& s) {
  std::vector<T> out;
  for (const auto& part : split_list(s)) {
    if constexpr (std::is_floating_point_v<T>) out.push_back(parse_real(key, part));
    else out.push_back(static_cast<T>(parse_size(key, part)));
  }
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

/// Shortest text that reads back to the same double.
inline std::string num(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << content;
  if (!out) throw FormatError("failed writing " + path.string());
}

} // namespace detail

/// Fully resolved settings for one command.
struct ExperimentConfig {
  std::string dataset; ///< registry name; empty when `csv` is set
  std::string csv;
  SplitRatios split;
  ModelConfig model; ///< n_vars is filled in from the data
  TrainConfig train;
  std::string out = "runs";
  SweepGrid grid;
  std::set<std::string> explicit_keys; ///< keys set by a flag or the config file
};

/// Merges flags over file values over defaults. `command_defaults` sits just above
/// the registry defaults (for example bench's short epoch count).
inline ExperimentConfig resolve_config(const ConfigLayer& flags, const ConfigLayer& file,
                                       const std::map<std::string, std::string>& command_defaults = {}) {
  for (const ConfigLayer* layer : {&flags, &file})
    if (layer->has("dataset") && layer->has("csv"))
      throw ConfigError(layer->origin + ": --dataset and --csv are mutually exclusive");

  std::map<std::string, std::string> v = command_defaults;
  ExperimentConfig cfg;
  const bool flag_source = flags.has("dataset") || flags.has("csv");
  for (const ConfigLayer* layer : {&file, &flags})
    for (const auto& [key, value] : layer->values) {
      if ((key == "dataset" || key == "csv") && layer == &file && flag_source) continue;
      v[key] = value;
      cfg.explicit_keys.insert(key);
    }
  auto get = [&](const std::string& key) -> const std::string* {
    auto it = v.find(key);
    return it == v.end() ? nullptr : &it->second;
  };

  std::size_t default_history = 96, default_horizon = 96;
  if (const auto* name = get("dataset")) {
    const DatasetInfo info = find_dataset(*name);
    cfg.dataset = info.name;
    cfg.split = info.ratios;
    default_history = info.history;
    if (!info.horizons.empty()) default_horizon = info.horizons.front();
    if (info.n_vars) cfg.model.n_vars = info.n_vars;
  } else if (const auto* path = get("csv")) {
    cfg.csv = *path;
  } else {
    throw ConfigError("one of --dataset or --csv is required");
  }

  using detail::parse_flag, detail::parse_real, detail::parse_size;
  if (const auto* s = get("split")) {
    const auto r = detail::parse_list<double>("split", *s);
    if (r.size() != 3) throw ConfigError("split: expected three ratios train,val,test");
    cfg.split = {r[0], r[1], r[2]};
  }
  ModelConfig& m = cfg.model;
  m.history = get("history") ? parse_size("history", *get("history")) : default_history;
  m.horizon = get("horizon") ? parse_size("horizon", *get("horizon")) : default_horizon;
  const HorizonDefaults hd = horizon_defaults(m.horizon);
  m.interval = get("interval") ? parse_size("interval", *get("interval")) : hd.interval;
  m.heads = get("heads") ? parse_size("heads", *get("heads")) : hd.heads;
  m.w_l1 = get("w_l1") ? parse_real("w_l1", *get("w_l1")) : hd.w_l1;
  if (const auto* s = get("dropout")) m.dropout = parse_real("dropout", *s);
  if (const auto* s = get("var_attn")) m.var_mode = parse_var_axis_mode(*s);
  if (const auto* s = get("ablate")) m.ablate = parse_ablation(*s);
  if (const auto* s = get("decoder_hidden")) m.decoder_hidden = parse_size("decoder_hidden", *s);
  if (const auto* s = get("scale_temporal")) m.scale_temporal = parse_flag("scale_temporal", *s);

  TrainConfig& t = cfg.train;
  if (const auto* s = get("seeds")) t.seeds = detail::parse_list<std::uint64_t>("seeds", *s);
  if (const auto* s = get("epochs")) t.epochs = parse_size("epochs", *s);
  if (const auto* s = get("batch")) t.batch_size = parse_size("batch", *s);
  if (const auto* s = get("lr")) t.schedule.base_lr = parse_real("lr", *s);
  if (const auto* s = get("milestones")) t.schedule.milestones = detail::parse_list<int>("milestones", *s);
  if (const auto* s = get("gamma")) t.schedule.gamma = parse_real("gamma", *s);
  if (const auto* s = get("patience")) t.patience = parse_size("patience", *s);
  if (const auto* s = get("clip_norm")) t.clip_norm = parse_real("clip_norm", *s);
  if (const auto* s = get("select_last")) t.select_last_epoch = parse_flag("select_last", *s);
  if (const auto* s = get("out")) cfg.out = *s;
  if (const auto* s = get("grid_c")) cfg.grid.intervals = detail::parse_list<std::size_t>("grid_c", *s);
  if (const auto* s = get("grid_h")) cfg.grid.histories = detail::parse_list<std::size_t>("grid_h", *s);
  if (const auto* s = get("grid_l")) cfg.grid.horizons = detail::parse_list<std::size_t>("grid_l", *s);

  t.validate();
  return cfg;
}

inline TimeSeriesFrame load_source(const std::string& dataset, const std::string& csv) {
  if (!dataset.empty()) return load_dataset(find_dataset(dataset));
  if (!std::filesystem::is_regular_file(csv)) throw ConfigError("CSV file not found: " + csv);
  return load_csv(csv);
}

/// Loads the data and completes validation; nothing is written before this succeeds.
inline TimeSeriesFrame load_and_check(ExperimentConfig& cfg) {
  TimeSeriesFrame frame = load_source(cfg.dataset, cfg.csv);
  frame.validate();
  cfg.model.n_vars = frame.n_vars();
  cfg.model.validate();
  return frame;
}

inline nlohmann::json experiment_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  if (!cfg.dataset.empty()) j["dataset"] = cfg.dataset;
  else j["csv"] = cfg.csv;
  j["split"] = {cfg.split.train, cfg.split.val, cfg.split.test};
  j["model"] = config_to_json(cfg.model);
  const TrainConfig& t = cfg.train;
  j["train"] = {{"batch", t.batch_size},         {"epochs", t.epochs},
                {"lr", t.schedule.base_lr},       {"milestones", t.schedule.milestones},
                {"gamma", t.schedule.gamma},      {"patience", t.patience},
                {"clip_norm", t.clip_norm},       {"select_last", t.select_last_epoch}};
  j["seeds"] = t.seeds;
  return j;
}

inline std::string seeds_text(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (auto v : seeds) s += (s.empty() ? "" : ",") + std::to_string(v);
  return s;
}

inline std::string source_name(const ExperimentConfig& cfg) { return cfg.dataset.empty() ? cfg.csv : cfg.dataset; }

// ---------------------------------------------------------------------------
// train

inline nlohmann::json summary_json(const ExperimentConfig& cfg, const ExperimentResult& r) {
  std::size_t ok = 0;
  for (const auto& run : r.runs) ok += run.failed ? 0 : 1;
  nlohmann::json j{{"config", experiment_json(cfg)},
                   {"seeds_completed", ok},
                   {"failed", r.failed},
                   {"test", {{"mse", r.mean.mse}, {"mae", r.mean.mae}}},
                   {"mean_epoch_seconds", r.mean_epoch_seconds}};
  if (r.failed) j["error"] = r.error;
  j["schema"] = kMetricsSchema;
  return j;
}

/// JSON-lines records: one per epoch, one per seed, then a summary.
inline std::string metrics_jsonl(const ExperimentConfig& cfg, const ExperimentResult& r) {
  std::string out;
  auto line = [&](nlohmann::json j) {
    j["schema"] = kMetricsSchema;
    out += j.dump() + '\n';
  };
  for (const auto& run : r.runs) {
    for (const auto& e : run.epochs) {
      nlohmann::json j{{"kind", "epoch"},       {"seed", run.seed}, {"epoch", e.epoch},
                       {"train_loss", e.train_loss}, {"lr", e.lr},     {"clipped_steps", e.clipped_steps},
                       {"seconds", e.seconds}};
      j["val_mse"] = e.val ? nlohmann::json(e.val->mse) : nlohmann::json(nullptr);
      j["val_mae"] = e.val ? nlohmann::json(e.val->mae) : nlohmann::json(nullptr);
      line(j);
    }
    nlohmann::json j{{"kind", "run"},          {"seed", run.seed},       {"failed", run.failed},
                     {"best_epoch", run.best_epoch}, {"epochs_run", run.epochs.size()},
                     {"mean_epoch_seconds", run.mean_epoch_seconds()}};
    if (run.failed) j["error"] = run.error;
    else j["test"] = {{"mse", run.test.mse}, {"mae", run.test.mae}};
    line(j);
  }
  nlohmann::json s = summary_json(cfg, r);
  s["kind"] = "summary";
  line(s);
  return out;
}

inline std::string summary_text(const ExperimentConfig& cfg, const ExperimentResult& r) {
  using detail::num;
  const ModelConfig& m = cfg.model;
  std::ostringstream s;
  s << "data      " << source_name(cfg) << "  N=" << m.n_vars << "\n"
    << "model     H=" << m.history << " L=" << m.horizon << " C=" << m.interval << " heads=" << m.heads
    << " dropout=" << num(m.dropout) << " var_attn=" << to_string(m.var_mode) << " ablate=" << ablation_name(m.ablate)
    << " w_l1=" << num(m.w_l1) << "\n"
    << "training  epochs=" << cfg.train.epochs << " batch=" << cfg.train.batch_size
    << " lr=" << num(cfg.train.schedule.base_lr) << " seeds=" << seeds_text(cfg.train.seeds) << "\n";
  std::size_t ok = 0;
  for (const auto& run : r.runs) {
    s << "seed " << run.seed << "    ";
    if (run.failed) {
      s << "FAILED: " << run.error << "\n";
      continue;
    }
    ++ok;
    s << "best_epoch=" << run.best_epoch << " test MSE " << num(run.test.mse) << " MAE " << num(run.test.mae) << "\n";
  }
  if (ok > 0)
    s << "mean      test MSE " << num(r.mean.mse) << " MAE " << num(r.mean.mae) << " over " << ok << " seed(s)\n"
      << "epoch     " << num(r.mean_epoch_seconds) << " s mean wall-clock\n";
  if (r.failed) s << "status    FAILED (" << r.error << ")\n";
  return s.str();
}

inline int cmd_train(ExperimentConfig cfg, std::ostream& out) {
  const TimeSeriesFrame frame = load_and_check(cfg);
  const PreparedData data = prepare_data(frame, cfg.split, cfg.model.history, cfg.model.horizon);
  const std::filesystem::path dir(cfg.out);
  std::filesystem::create_directories(dir);

  const ExperimentResult r = run_experiment(data, cfg.model, cfg.train);
  std::size_t model = 0;
  for (const auto& run : r.runs) {
    if (run.failed) continue;
    Checkpoint ck{cfg.model, r.stats, frame.names, r.models[model++], source_name(cfg), cfg.split, run.seed};
    save_checkpoint((dir / ("checkpoint_seed" + std::to_string(run.seed) + ".dsfm")).string(), ck);
  }
  detail::write_file(dir / "metrics.jsonl", metrics_jsonl(cfg, r));
  detail::write_file(dir / "summary.json", summary_json(cfg, r).dump(2) + '\n');
  const std::string text = summary_text(cfg, r);
  detail::write_file(dir / "summary.txt", text);
  out << text;
  return r.failed ? 1 : 0;
}

// ---------------------------------------------------------------------------
// evaluate

/// Metrics of a saved model on one split, normalized with the stored statistics.
inline Metrics evaluate_checkpoint(const Checkpoint& ck, const TimeSeriesFrame& frame, const std::string& split) {
  if (frame.n_vars() != ck.config.n_vars)
    throw DimensionError("checkpoint expects N=" + std::to_string(ck.config.n_vars) + " variables, data has " +
                         std::to_string(frame.n_vars()));
  const PreparedData data = prepare_data(frame, ck.split, ck.config.history, ck.config.horizon, true, &ck.stats);
  const WindowSet* w = split == "train" ? &data.train : split == "val" ? &data.val : split == "test" ? &data.test : nullptr;
  if (!w) throw ConfigError("split must be train, val or test, got '" + split + "'");
  if (w->empty()) throw ConfigError("the " + split + " split has no windows for H=" +
                                    std::to_string(ck.config.history) + ", L=" + std::to_string(ck.config.horizon));
  return evaluate(ck.params, ck.config, *w);
}

inline int cmd_evaluate(const std::string& checkpoint, const std::string& dataset, const std::string& csv,
                        const std::string& split, std::ostream& out) {
  if (dataset.empty() == csv.empty()) throw ConfigError("exactly one of --dataset or --csv is required");
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Metrics m = evaluate_checkpoint(ck, load_source(dataset, csv), split);
  out << nlohmann::json{{"split", split}, {"mse", m.mse}, {"mae", m.mae}}.dump() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// predict

/// Forecast in original units for one window of exactly H rows.
inline TimeSeriesFrame forecast(const Checkpoint& ck, const TimeSeriesFrame& window) {
  const ModelConfig& c = ck.config;
  if (window.n_vars() != c.n_vars)
    throw DimensionError("checkpoint expects N=" + std::to_string(c.n_vars) + " columns, input has " +
                         std::to_string(window.n_vars()));
  if (window.timesteps() != c.history)
    throw DimensionError("input must have exactly H=" + std::to_string(c.history) + " rows, got " +
                         std::to_string(window.timesteps()));
  const TimeSeriesFrame normed = zscore_apply(window, ck.stats);
  const Tensor y = predict(ck.params, c, permute(normed.values, {1, 0}));
  TimeSeriesFrame out{permute(y, {1, 0}), ck.var_names, window.granularity, {}};
  return zscore_invert(out, ck.stats);
}

inline int cmd_predict(const std::string& checkpoint, const std::string& input, const std::string& out_dir,
                       std::ostream& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  if (!std::filesystem::is_regular_file(input)) throw ConfigError("input CSV not found: " + input);
  const TimeSeriesFrame window = load_csv(input);
  if (window.names != ck.var_names && window.n_vars() == ck.var_names.size())
    warn("input column names differ from the checkpoint's; using column order");
  const TimeSeriesFrame fc = forecast(ck, window);
  const std::string text = to_csv(fc.values, fc.names);
  if (out_dir.empty()) {
    out << text;
  } else {
    std::filesystem::create_directories(out_dir);
    detail::write_file(std::filesystem::path(out_dir) / "forecast.csv", text);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// ablate

inline nlohmann::json ablation_json(const ExperimentConfig& cfg, const std::vector<AblationRow>& rows) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& run : row.result.runs)
      per_seed.push_back({{"seed", run.seed}, {"failed", run.failed}, {"mse", run.test.mse}, {"mae", run.test.mae}});
    list.push_back({{"variant", row.variant},
                    {"failed", row.result.failed},
                    {"mse", row.result.mean.mse},
                    {"mae", row.result.mean.mae},
                    {"mean_epoch_seconds", row.result.mean_epoch_seconds},
                    {"per_seed", per_seed}});
  }
  return {{"schema", kAblationSchema}, {"config", experiment_json(cfg)}, {"seeds", cfg.train.seeds}, {"rows", list}};
}

inline std::string ablation_csv(const ExperimentConfig& cfg, const std::vector<AblationRow>& rows) {
  std::string s = "variant,seeds,mse,mae,failed\n";
  for (const auto& row : rows)
    s += row.variant + ",\"" + seeds_text(cfg.train.seeds) + "\"," + detail::num(row.result.mean.mse) + "," +
         detail::num(row.result.mean.mae) + "," + (row.result.failed ? "true" : "false") + "\n";
  return s;
}

inline int cmd_ablate(ExperimentConfig cfg, std::ostream& out) {
  if (cfg.explicit_keys.contains("ablate")) throw ConfigError("ablate runs every variant; remove the 'ablate' setting");
  const TimeSeriesFrame frame = load_and_check(cfg);
  const PreparedData data = prepare_data(frame, cfg.split, cfg.model.history, cfg.model.horizon);
  const std::filesystem::path dir(cfg.out);
  std::filesystem::create_directories(dir);

  const auto rows = ablation_suite(data, cfg.model, cfg.train);
  detail::write_file(dir / "ablation.json", ablation_json(cfg, rows).dump(2) + '\n');
  const std::string table = ablation_csv(cfg, rows);
  detail::write_file(dir / "ablation.csv", table);
  out << table;
  bool failed = false;
  for (const auto& row : rows) failed = failed || row.result.failed;
  return failed ? 1 : 0;
}

// ---------------------------------------------------------------------------
// sweep

inline nlohmann::json sweep_json(const ExperimentConfig& cfg, const std::vector<SweepCell>& cells) {
  nlohmann::json list = nlohmann::json::array();
  std::size_t skipped = 0;
  for (const auto& c : cells) {
    nlohmann::json j{{"history", c.history}, {"interval", c.interval}, {"horizon", c.horizon},
                     {"heads", c.heads},     {"w_l1", c.w_l1},         {"skipped", c.skipped}};
    if (c.skipped) {
      j["reason"] = c.reason;
      ++skipped;
    } else {
      j["mse"] = c.mean.mse;
      j["mae"] = c.mean.mae;
      nlohmann::json per_seed = nlohmann::json::array();
      for (std::size_t i = 0; i < c.per_seed.size(); ++i)
        per_seed.push_back({{"seed", cfg.train.seeds[i]}, {"mse", c.per_seed[i].mse}, {"mae", c.per_seed[i].mae}});
      j["per_seed"] = per_seed;
    }
    list.push_back(j);
  }
  return {{"schema", kSweepSchema}, {"config", experiment_json(cfg)}, {"cells", list},
          {"cell_count", cells.size()}, {"skipped", skipped}};
}

inline std::string sweep_csv(const std::vector<SweepCell>& cells) {
  std::string s = "horizon,interval,history,heads,w_l1,status,mse,mae\n";
  for (const auto& c : cells) {
    s += std::to_string(c.horizon) + "," + std::to_string(c.interval) + "," + std::to_string(c.history) + "," +
         std::to_string(c.heads) + "," + detail::num(c.w_l1) + ",";
    s += c.skipped ? "skipped,," : "ok," + detail::num(c.mean.mse) + "," + detail::num(c.mean.mae);
    s += "\n";
  }
  return s;
}

inline int cmd_sweep(ExperimentConfig cfg, std::ostream& out) {
  for (const char* key : {"history", "horizon", "interval", "heads", "w_l1"})
    if (cfg.explicit_keys.contains(key))
      throw ConfigError(std::string("sweep sets '") + key + "' per cell; use grid_c, grid_h and grid_l instead");
  TimeSeriesFrame frame = load_source(cfg.dataset, cfg.csv);
  frame.validate();
  cfg.model.n_vars = frame.n_vars();
  const std::filesystem::path dir(cfg.out);
  // checks the settings shared by every cell before anything is written
  ModelConfig probe = cfg.model;
  probe.history = probe.interval = probe.heads = 1;
  probe.validate();
  std::filesystem::create_directories(dir);

  const auto cells = sweep(frame, cfg.split, cfg.model, cfg.train, cfg.grid);
  detail::write_file(dir / "sweep.json", sweep_json(cfg, cells).dump(2) + '\n');
  const std::string table = sweep_csv(cells);
  detail::write_file(dir / "sweep.csv", table);
  out << table;
  return 0;
}

// ---------------------------------------------------------------------------
// bench

inline int cmd_bench(ExperimentConfig cfg, std::ostream& out) {
  const TimeSeriesFrame frame = load_and_check(cfg);
  const PreparedData data = prepare_data(frame, cfg.split, cfg.model.history, cfg.model.horizon);
  const std::filesystem::path dir(cfg.out);
  std::filesystem::create_directories(dir);

  const BenchResult b = bench(data, cfg.model, cfg.train);
  const nlohmann::json j{{"schema", kBenchSchema},       {"config", experiment_json(cfg)},
                         {"epochs", b.epochs},           {"batch_size", b.batch_size},
                         {"mean_seconds", b.mean_seconds}, {"min_seconds", b.min_seconds},
                         {"max_seconds", b.max_seconds}, {"seconds", b.seconds}};
  detail::write_file(dir / "bench.json", j.dump(2) + '\n');
  out << "epochs " << b.epochs << "  batch " << b.batch_size << "  epoch seconds mean " << detail::num(b.mean_seconds)
      << " min " << detail::num(b.min_seconds) << " max " << detail::num(b.max_seconds) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point

namespace detail {

/// Flag values captured as text so flags and config files share one parser.
struct FlagCapture {
  std::map<std::string, std::string> text;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void add(CLI::App* app, const std::string& flag, const std::string& help) {
    const std::string key = normalize_key(flag);
    options.emplace_back(key, app->add_option("--" + flag, text[key], help));
  }
  ConfigLayer layer() const {
    ConfigLayer l{"command line", {}};
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) l.set(key, text.at(key));
    return l;
  }
};

inline void add_experiment_flags(CLI::App* app, FlagCapture& f, bool model_shape, bool ablate) {
  f.add(app, "dataset", "registered dataset name (files under $DSFORMER_DATA_ROOT)");
  f.add(app, "csv", "CSV file with a header row and optional leading date column");
  f.add(app, "split", "train,val,test ratios");
  if (model_shape) {
    f.add(app, "history", "input window length H");
    f.add(app, "horizon", "forecast length L");
    f.add(app, "interval", "sampling interval C (must divide H)");
    f.add(app, "heads", "attention heads (must divide H/C)");
    f.add(app, "w-l1", "L1 weight of the training loss, in [0, 1]");
  }
  f.add(app, "dropout", "dropout rate");
  f.add(app, "var-attn", "variable attention mode: variables or subsequences");
  if (ablate) f.add(app, "ablate", "remove one component: ps, ds, as, ta or va");
  f.add(app, "seeds", "comma-separated seed list");
  f.add(app, "epochs", "training epochs");
  f.add(app, "batch", "batch size");
  f.add(app, "lr", "base learning rate");
  f.add(app, "milestones", "epochs at which the learning rate is multiplied by gamma");
  f.add(app, "gamma", "learning-rate decay factor");
  f.add(app, "patience", "early-stopping patience in epochs (0 disables)");
  f.add(app, "clip-norm", "global gradient-norm clip (0 disables)");
  f.add(app, "decoder-hidden", "width of an optional hidden decoder layer");
  f.add(app, "out", "output directory");
}

} // namespace detail

/// Parses arguments and runs one command. Returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"DSformer multivariate time-series forecaster"};
  app.require_subcommand(1);

  struct Command {
    CLI::App* app;
    detail::FlagCapture flags;
    std::string config;
    std::map<std::string, std::string> defaults;
  };
  std::map<std::string, Command> commands;
  auto experiment = [&](const std::string& name, const std::string& help, bool model_shape, bool ablate) {
    Command& c = commands[name];
    c.app = app.add_subcommand(name, help);
    detail::add_experiment_flags(c.app, c.flags, model_shape, ablate);
    c.app->add_option("--config", c.config, "key = value settings file (flags take precedence)");
    return &c;
  };
  experiment("train", "train one model per seed; write checkpoints, metrics and a summary", true, true);
  experiment("ablate", "train the full model and each component-removal variant", true, false);
  Command* sweep_cmd = experiment("sweep", "grid over history length, sampling interval and horizon", false, true);
  sweep_cmd->flags.add(sweep_cmd->app, "grid-c", "sampling intervals (default 2,3,4,6)");
  sweep_cmd->flags.add(sweep_cmd->app, "grid-h", "history lengths (default 96,192,336)");
  sweep_cmd->flags.add(sweep_cmd->app, "grid-l", "horizons (default 96,192,336,720)");
  experiment("bench", "time training epochs of the first seed (3 epochs unless set)", true, true)->defaults = {
      {"epochs", "3"}};

  std::string checkpoint, dataset, csv, split = "test", input, out_dir;
  CLI::App* eval = app.add_subcommand("evaluate", "normalized MSE/MAE of a checkpoint on one split");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--dataset", dataset, "registered dataset name");
  eval->add_option("--csv", csv, "CSV file");
  eval->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  CLI::App* pred = app.add_subcommand("predict", "forecast L rows in original units from an H-row CSV window");
  pred->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  pred->add_option("--input", input, "CSV with exactly H rows")->required();
  pred->add_option("--out", out_dir, "write forecast.csv here instead of standard output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (eval->parsed()) return cmd_evaluate(checkpoint, dataset, csv, split, out);
    if (pred->parsed()) return cmd_predict(checkpoint, input, out_dir, out);
    for (auto& [name, c] : commands) {
      if (!c.app->parsed()) continue;
      const ConfigLayer file = c.config.empty() ? ConfigLayer{"config", {}} : parse_config_file(c.config);
      ExperimentConfig cfg = resolve_config(c.flags.layer(), file, c.defaults);
      if (name == "train") return cmd_train(std::move(cfg), out);
      if (name == "ablate") return cmd_ablate(std::move(cfg), out);
      if (name == "sweep") return cmd_sweep(std::move(cfg), out);
      return cmd_bench(std::move(cfg), out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

} // namespace dsformer
