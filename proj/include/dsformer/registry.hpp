#pragma once

// Built-in benchmark dataset table and per-horizon hyperparameter defaults.
// Files are resolved under a data root taken from DSFORMER_DATA_ROOT
// (default "./data"); an optional registry.json in that root overrides entries.

#include "dsformer/data.hpp"
#include "dsformer/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace dsformer {

struct DatasetInfo {
  std::string name; ///< lower-case lookup key
  std::string file; ///< relative to the data root
  std::size_t n_vars = 0;
  std::size_t timesteps = 0;
  std::string granularity;
  SplitRatios ratios;
  std::size_t history = 96;
  std::vector<std::size_t> horizons;
};

/// Per-horizon defaults for heads, sampling interval and L1 weight.
struct HorizonDefaults {
  std::size_t heads = 2;
  std::size_t interval = 2;
  double w_l1 = 0.35;
};

/// Columns for L = 96/192/336/720. Shorter horizons (ILI) use the first column;
/// longer ones the last.
inline HorizonDefaults horizon_defaults(std::size_t horizon) {
  static constexpr HorizonDefaults table[4] = {{2, 2, 0.35}, {2, 2, 0.35}, {1, 3, 0.65}, {1, 3, 0.65}};
  static constexpr std::size_t limits[3] = {96, 192, 336};
  std::size_t col = 3;
  for (std::size_t i = 0; i < 3; ++i)
    if (horizon <= limits[i]) {
      col = i;
      break;
    }
  return table[col];
}

inline const std::vector<DatasetInfo>& builtin_datasets() {
  static const std::vector<DatasetInfo> table = [] {
    const SplitRatios ett{0.6, 0.2, 0.2};
    const SplitRatios other{0.7, 0.1, 0.2};
    const std::vector<std::size_t> long_h{96, 192, 336, 720};
    return std::vector<DatasetInfo>{
        {"etth1", "ETTh1.csv", 7, 17420, "1hour", ett, 96, long_h},
        {"etth2", "ETTh2.csv", 7, 17420, "1hour", ett, 96, long_h},
        {"ettm1", "ETTm1.csv", 7, 69680, "15min", ett, 96, long_h},
        {"ettm2", "ETTm2.csv", 7, 69680, "15min", ett, 96, long_h},
        {"exchange", "exchange_rate.csv", 8, 7588, "1day", other, 96, long_h},
        {"ili", "national_illness.csv", 7, 966, "1week", other, 36, {24, 36, 48, 60}},
        {"weather", "weather.csv", 21, 52696, "10min", other, 96, long_h},
        {"electricity", "electricity.csv", 321, 26304, "1hour", other, 96, long_h},
        {"traffic", "traffic.csv", 862, 17544, "1hour", other, 96, long_h},
    };
  }();
  return table;
}

inline std::string data_root() {
  const char* env = std::getenv("DSFORMER_DATA_ROOT");
  return env && *env ? std::string(env) : std::string("data");
}

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

/// Looks up a dataset by case-insensitive name, applying registry.json overrides
/// from the data root. Unknown names are a ConfigError listing the known ones.
inline DatasetInfo find_dataset(const std::string& name, const std::string& root = data_root()) {
  const std::string key = lower(name);
  std::vector<DatasetInfo> table = builtin_datasets();

  const auto override_path = std::filesystem::path(root) / "registry.json";
  if (std::filesystem::exists(override_path)) {
    std::ifstream in(override_path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(override_path.string() + ": " + e.what());
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string k = lower(it.key());
      auto found = std::find_if(table.begin(), table.end(), [&](const DatasetInfo& d) { return d.name == k; });
      if (found == table.end()) {
        table.push_back(DatasetInfo{k, k + ".csv", 0, 0, "", {}, 96, {96, 192, 336, 720}});
        found = table.end() - 1;
      }
      const auto& v = it.value();
      if (v.contains("file")) found->file = v["file"].get<std::string>();
      if (v.contains("history")) found->history = v["history"].get<std::size_t>();
      if (v.contains("horizons")) found->horizons = v["horizons"].get<std::vector<std::size_t>>();
      if (v.contains("granularity")) found->granularity = v["granularity"].get<std::string>();
      if (v.contains("split")) {
        const auto r = v["split"].get<std::vector<double>>();
        if (r.size() != 3) throw ConfigError(override_path.string() + ": split needs three ratios");
        found->ratios = {r[0], r[1], r[2]};
      }
    }
  }

  for (const auto& d : table)
    if (d.name == key) return d;
  std::string known;
  for (const auto& d : table) known += (known.empty() ? "" : ", ") + d.name;
  throw ConfigError("unknown dataset '" + name + "' (known: " + known + ")");
}

inline std::string dataset_path(const DatasetInfo& info, const std::string& root = data_root()) {
  return (std::filesystem::path(root) / info.file).string();
}

/// Loads a registered dataset and checks its shape against the table.
inline TimeSeriesFrame load_dataset(const DatasetInfo& info, const std::string& root = data_root()) {
  const std::string path = dataset_path(info, root);
  if (!std::filesystem::exists(path))
    throw ConfigError("dataset '" + info.name + "' not found at " + path + " (set DSFORMER_DATA_ROOT)");
  TimeSeriesFrame frame = load_csv(path);
  if (info.n_vars && frame.n_vars() != info.n_vars)
    throw FormatError(path + ": expected " + std::to_string(info.n_vars) + " variables, found " +
                      std::to_string(frame.n_vars()));
  frame.granularity = info.granularity;
  return frame;
}

} // namespace dsformer
