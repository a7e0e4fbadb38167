#include "dsformer/cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dsformer;
namespace fs = std::filesystem;

namespace {

struct RunOutput {
  int code = 0;
  std::string out, err;
};

RunOutput run(std::vector<std::string> args) {
  args.insert(args.begin(), "dsformer");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  RunOutput r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

class CliTest : public ::testing::Test {
protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("dsformer_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string write_csv(const std::string& name, const TimeSeriesFrame& f) const {
    std::ofstream(path(name)) << to_csv(f.values, f.names);
    return path(name);
  }

  std::string seasonal_csv(std::size_t n = 3, std::size_t t = 240) const {
    return write_csv("series.csv", synth_seasonal(n, t, 12, 0.05, 11));
  }

  static std::string read(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }

  fs::path dir_;
};

std::vector<std::string> small_run(const std::string& csv, const std::string& out) {
  return {"--csv", csv, "--history", "24", "--horizon", "8", "--epochs", "2", "--seeds", "1,2", "--out", out};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::string strip_timing(const std::string& jsonl) {
  std::istringstream in(jsonl);
  std::string line, out;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    for (const auto& k : timing_keys()) j.erase(k);
    out += j.dump() + '\n';
  }
  return out;
}

} // namespace

TEST(CliConfig, FileParsingSkipsCommentsAndBlankLines) {
  ConfigLayer l = parse_config_text("# settings\n\nhistory = 48   # longer window\nvar-attn=subsequences\n", "f.cfg");
  EXPECT_EQ(l.values.at("history"), "48");
  EXPECT_EQ(l.values.at("var_attn"), "subsequences");
  EXPECT_EQ(l.values.size(), 2u);
}

TEST(CliConfig, UnknownAndRepeatedKeysAreErrors) {
  EXPECT_THROW(parse_config_text("histroy = 48\n", "f.cfg"), ConfigError);
  EXPECT_THROW(parse_config_text("history = 48\nhistory = 96\n", "f.cfg"), ConfigError);
  EXPECT_THROW(parse_config_text("history\n", "f.cfg"), ConfigError);
  try {
    parse_config_text("lr = 1\nbogus = 2\n", "f.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("f.cfg:2"), std::string::npos);
  }
}

TEST(CliConfig, FlagOverridesFileOverridesRegistryDefault) {
  ConfigLayer file{"file", {}};
  ConfigLayer flags{"flags", {}};
  flags.set("dataset", "ILI");
  EXPECT_EQ(resolve_config(flags, file).model.history, 36u);
  EXPECT_EQ(resolve_config(flags, file).model.horizon, 24u);
  file.set("history", "48");
  EXPECT_EQ(resolve_config(flags, file).model.history, 48u);
  flags.set("history", "60");
  EXPECT_EQ(resolve_config(flags, file).model.history, 60u);
}

TEST(CliConfig, HorizonSelectsTableDefaults) {
  ConfigLayer flags{"flags", {}};
  flags.set("dataset", "etth2");
  flags.set("horizon", "336");
  ExperimentConfig c = resolve_config(flags, {});
  EXPECT_EQ(c.model.heads, 1u);
  EXPECT_EQ(c.model.interval, 3u);
  EXPECT_EQ(c.model.w_l1, 0.65);
  EXPECT_EQ(c.split.train, 0.6);
  EXPECT_EQ(c.train.batch_size, 16u);
  EXPECT_EQ(c.train.schedule.base_lr, 1e-4);
  EXPECT_EQ(c.train.seeds.size(), 5u);
}

TEST(CliConfig, DatasetAndCsvConflict) {
  ConfigLayer flags{"flags", {}};
  flags.set("dataset", "ili");
  flags.set("csv", "x.csv");
  EXPECT_THROW(resolve_config(flags, {}), ConfigError);

  ConfigLayer file{"file", {}};
  file.set("csv", "x.csv");
  ConfigLayer only_dataset{"flags", {}};
  only_dataset.set("dataset", "ili");
  ExperimentConfig c = resolve_config(only_dataset, file);
  EXPECT_EQ(c.dataset, "ili");
  EXPECT_TRUE(c.csv.empty());
  EXPECT_THROW(resolve_config({}, {}), ConfigError);
}

TEST(CliConfig, BadValuesAreRejected) {
  ConfigLayer flags{"flags", {}};
  flags.set("csv", "x.csv");
  flags.set("epochs", "ten");
  EXPECT_THROW(resolve_config(flags, {}), ConfigError);
  ConfigLayer unknown_dataset{"flags", {}};
  unknown_dataset.set("dataset", "nope");
  EXPECT_THROW(resolve_config(unknown_dataset, {}), ConfigError);
}

TEST_F(CliTest, TrainWritesArtifactsAndEvaluateReproducesThem) {
  const std::string csv = seasonal_csv();
  const std::string out = path("run");
  RunOutput r = run(concat({"train"}, small_run(csv, out)));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"metrics.jsonl", "summary.json", "summary.txt", "checkpoint_seed1.dsfm", "checkpoint_seed2.dsfm"})
    EXPECT_TRUE(fs::exists(fs::path(out) / f)) << f;

  const auto summary = nlohmann::json::parse(read(out + "/summary.json"));
  EXPECT_EQ(summary.at("schema"), kMetricsSchema);
  EXPECT_EQ(summary.at("seeds_completed"), 2);

  std::istringstream lines(read(out + "/metrics.jsonl"));
  std::string line;
  std::size_t epochs = 0;
  std::vector<double> test_mse;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("schema"), kMetricsSchema);
    if (j.at("kind") == "epoch") {
      ++epochs;
      EXPECT_TRUE(j.contains("seconds"));
    }
    if (j.at("kind") == "run") test_mse.push_back(j.at("test").at("mse").get<double>());
  }
  EXPECT_EQ(epochs, 4u);
  ASSERT_EQ(test_mse.size(), 2u);
  EXPECT_DOUBLE_EQ(summary.at("test").at("mse").get<double>(), (test_mse[0] + test_mse[1]) / 2.0);

  RunOutput ev = run({"evaluate", "--checkpoint", out + "/checkpoint_seed2.dsfm", "--csv", csv});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_EQ(nlohmann::json::parse(ev.out).at("mse").get<double>(), test_mse[1]);

  RunOutput val = run({"evaluate", "--checkpoint", out + "/checkpoint_seed2.dsfm", "--csv", csv, "--split", "val"});
  ASSERT_EQ(val.code, 0) << val.err;
  EXPECT_NE(nlohmann::json::parse(val.out).at("mse").get<double>(), test_mse[1]);
}

TEST_F(CliTest, RerunsProduceIdenticalMetrics) {
  const std::string csv = seasonal_csv();
  ASSERT_EQ(run(concat({"train"}, small_run(csv, path("a")))).code, 0);
  ASSERT_EQ(run(concat({"train"}, small_run(csv, path("b")))).code, 0);
  EXPECT_EQ(strip_timing(read(path("a/metrics.jsonl"))), strip_timing(read(path("b/metrics.jsonl"))));
  EXPECT_EQ(read(path("a/checkpoint_seed1.dsfm")), read(path("b/checkpoint_seed1.dsfm")));
}

TEST_F(CliTest, ConfigFileFeedsTheRunAndFlagsWin) {
  const std::string csv = seasonal_csv();
  std::ofstream(path("run.cfg")) << "csv = " << csv << "\nhistory = 24\nhorizon = 8\nepochs = 1\nseeds = 3\n"
                                 << "out = " << path("from_file") << "\n";
  RunOutput r = run({"train", "--config", path("run.cfg"), "--horizon", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto s = nlohmann::json::parse(read(path("from_file/summary.json")));
  EXPECT_EQ(s.at("config").at("model").at("horizon"), 4);
  EXPECT_EQ(s.at("config").at("model").at("history"), 24);
  EXPECT_EQ(s.at("config").at("seeds"), nlohmann::json::array({3}));
}

TEST_F(CliTest, MissingCsvFailsWithoutOutputs) {
  RunOutput r = run({"train", "--csv", path("absent.csv"), "--out", path("never")});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("absent.csv"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("never")));
}

TEST_F(CliTest, InvalidModelSettingsFailBeforeWriting) {
  RunOutput r = run({"train", "--csv", seasonal_csv(), "--history", "24", "--interval", "5", "--out", path("never")});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(path("never")));
  EXPECT_NE(run({"train", "--bogus-flag", "1"}).code, 0);
}

TEST_F(CliTest, EvaluateRejectsVariableCountMismatch) {
  const std::string out = path("run");
  ASSERT_EQ(run(concat({"train"}, small_run(seasonal_csv(), out))).code, 0);
  const std::string other = write_csv("four.csv", synth_seasonal(4, 240, 12, 0.05, 2));
  RunOutput r = run({"evaluate", "--checkpoint", out + "/checkpoint_seed1.dsfm", "--csv", other});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("N=3"), std::string::npos) << r.err;
}

TEST_F(CliTest, PredictEmitsHorizonRowsInOriginalUnits) {
  const std::string csv = seasonal_csv();
  const std::string out = path("run");
  ASSERT_EQ(run(concat({"train"}, small_run(csv, out))).code, 0);
  const TimeSeriesFrame full = load_csv(csv);
  write_csv("window.csv", full.slice(10, 34));

  RunOutput r = run({"predict", "--checkpoint", out + "/checkpoint_seed1.dsfm", "--input", path("window.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const TimeSeriesFrame fc = parse_csv(r.out);
  ASSERT_EQ(fc.timesteps(), 8u);
  ASSERT_EQ(fc.n_vars(), 3u);

  // independent path: normalize by hand, run the model, denormalize by hand
  const Checkpoint ck = load_checkpoint(out + "/checkpoint_seed1.dsfm");
  Tensor x({3, 24});
  for (std::size_t v = 0; v < 3; ++v)
    for (std::size_t t = 0; t < 24; ++t) x[v * 24 + t] = (full.at(10 + t, v) - ck.stats.mean[v]) / ck.stats.std[v];
  const Tensor y = predict(ck.params, ck.config, x);
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t v = 0; v < 3; ++v)
      EXPECT_NEAR(fc.at(t, v), y[v * 8 + t] * ck.stats.std[v] + ck.stats.mean[v], 1e-12);

  ASSERT_EQ(run({"predict", "--checkpoint", out + "/checkpoint_seed1.dsfm", "--input", path("window.csv"), "--out",
                 path("fc")})
                .code,
            0);
  EXPECT_EQ(read(path("fc/forecast.csv")), r.out);
}

TEST_F(CliTest, PredictNamesHOnWrongRowCount) {
  const std::string csv = seasonal_csv();
  const std::string out = path("run");
  ASSERT_EQ(run(concat({"train"}, small_run(csv, out))).code, 0);
  write_csv("short.csv", load_csv(csv).slice(0, 20));
  RunOutput r = run({"predict", "--checkpoint", out + "/checkpoint_seed1.dsfm", "--input", path("short.csv")});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("H=24"), std::string::npos) << r.err;
}

TEST_F(CliTest, ConstantSeriesGivesNearConstantForecast) {
  TimeSeriesFrame f{Tensor({200, 2}), {"a", "b"}, "", {}};
  for (std::size_t t = 0; t < 200; ++t) {
    f.values[t * 2] = 5.0;
    f.values[t * 2 + 1] = -2.0;
  }
  const std::string csv = write_csv("flat.csv", f);
  const std::string out = path("run");
  warning_sink() = nullptr;
  RunOutput r = run({"train", "--csv", csv, "--history", "12", "--horizon", "4", "--epochs", "40", "--seeds", "1",
                     "--lr", "0.01", "--dropout", "0", "--out", out});
  warning_sink() = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
  ASSERT_EQ(r.code, 0) << r.err;
  write_csv("window.csv", f.slice(0, 12));
  RunOutput p = run({"predict", "--checkpoint", out + "/checkpoint_seed1.dsfm", "--input", path("window.csv")});
  ASSERT_EQ(p.code, 0) << p.err;
  const TimeSeriesFrame fc = parse_csv(p.out);
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_NEAR(fc.at(t, 0), 5.0, 0.05);
    EXPECT_NEAR(fc.at(t, 1), -2.0, 0.05);
  }
}

TEST_F(CliTest, AblateWritesSixRowsWithSharedSeeds) {
  const std::string out = path("abl");
  RunOutput r = run(concat({"ablate"}, small_run(seasonal_csv(), out)));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(read(out + "/ablation.json"));
  ASSERT_EQ(j.at("rows").size(), 6u);
  for (const auto& row : j.at("rows")) {
    ASSERT_EQ(row.at("per_seed").size(), 2u);
    EXPECT_EQ(row.at("per_seed")[0].at("seed"), 1);
    EXPECT_EQ(row.at("per_seed")[1].at("seed"), 2);
  }
  EXPECT_EQ(j.at("seeds"), nlohmann::json::array({1, 2}));
  const std::string csv_text = read(out + "/ablation.csv");
  EXPECT_EQ(std::count(csv_text.begin(), csv_text.end(), '\n'), 7);

  EXPECT_EQ(run(concat({"ablate"}, small_run(seasonal_csv(), path("abl2")))).code, 0);
  EXPECT_EQ(read(path("abl2/ablation.csv")), csv_text);

  std::ofstream(path("with_ablate.cfg")) << "ablate = ta\n";
  EXPECT_EQ(run(concat({"ablate", "--config", path("with_ablate.cfg")}, small_run(seasonal_csv(), path("x")))).code, 2);
}

TEST_F(CliTest, SweepOrdersCellsAndMarksInfeasibleOnes) {
  const std::string out = path("sweep");
  RunOutput r = run({"sweep", "--csv", seasonal_csv(3, 300), "--grid-c", "5,2", "--grid-h", "24,12", "--grid-l", "8",
                     "--epochs", "1", "--seeds", "1", "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(read(out + "/sweep.json"));
  ASSERT_EQ(j.at("cells").size(), 4u);
  EXPECT_EQ(j.at("skipped"), 2);
  const auto& cells = j.at("cells");
  EXPECT_EQ(cells[0].at("interval"), 2);
  EXPECT_EQ(cells[0].at("history"), 12);
  EXPECT_EQ(cells[1].at("history"), 24);
  EXPECT_EQ(cells[2].at("interval"), 5);
  EXPECT_TRUE(cells[2].at("skipped").get<bool>());
  EXPECT_FALSE(cells[0].at("skipped").get<bool>());

  std::ofstream(path("bad.cfg")) << "history = 24\n";
  EXPECT_EQ(run({"sweep", "--config", path("bad.cfg"), "--csv", seasonal_csv(), "--out", path("y")}).code, 2);
}

TEST_F(CliTest, BenchReportsBatchSixteenByDefault) {
  const std::string out = path("bench");
  RunOutput r = run({"bench", "--csv", seasonal_csv(), "--history", "24", "--horizon", "8", "--seeds", "1", "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(read(out + "/bench.json"));
  EXPECT_EQ(j.at("batch_size"), 16);
  EXPECT_EQ(j.at("epochs"), 3);
  double sum = 0.0;
  for (double s : j.at("seconds")) sum += s;
  EXPECT_NEAR(j.at("mean_seconds").get<double>(), sum / 3.0, 1e-12);
}
