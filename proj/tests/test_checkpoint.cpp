#include "dsformer/checkpoint.hpp"
#include "dsformer/training.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace dsformer;

namespace {

Checkpoint make_checkpoint(std::uint64_t seed = 1) {
  Checkpoint ck;
  ck.config.n_vars = 3;
  ck.config.history = 12;
  ck.config.horizon = 4;
  ck.config.interval = 3;
  ck.config.heads = 2;
  ck.config.w_l1 = 0.65;
  ck.params = init_params(ck.config, seed);
  round_to_f32(ck.params.store);
  ck.stats = {{0.5, -1.25, 3.0}, {1.0, 0.1, 2.5}};
  ck.var_names = {"a", "b", "c"};
  ck.dataset = "synthetic";
  ck.seed = seed;
  return ck;
}

std::string with_fresh_checksum(std::string bytes) {
  const std::string body = bytes.substr(0, bytes.size() - 8);
  std::uint64_t h = detail::fnv1a(body);
  for (std::size_t i = 0; i < 8; ++i) bytes[body.size() + i] = static_cast<char>((h >> (8 * i)) & 0xFF);
  return bytes;
}

} // namespace

TEST(Checkpoint, RoundTripPredictsBitIdentically) {
  Checkpoint ck = make_checkpoint();
  const auto path = std::filesystem::temp_directory_path() / "dsformer_test.dsfm";
  save_checkpoint(path.string(), ck);
  Checkpoint back = load_checkpoint(path.string());
  std::filesystem::remove(path);

  EXPECT_EQ(back.config.interval, 3u);
  EXPECT_EQ(back.config.w_l1, 0.65);
  EXPECT_EQ(back.var_names, ck.var_names);
  EXPECT_EQ(back.stats.mean, ck.stats.mean);
  EXPECT_EQ(back.stats.std, ck.stats.std);
  EXPECT_EQ(back.dataset, "synthetic");
  ASSERT_EQ(back.params.store.size(), ck.params.store.size());
  for (std::size_t i = 0; i < ck.params.store.size(); ++i) {
    EXPECT_EQ(back.params.store[i].name, ck.params.store[i].name);
    EXPECT_EQ(back.params.store[i].value, ck.params.store[i].value);
  }
  Rng rng(1);
  Tensor x({5, 3, 12});
  for (auto& v : x.storage()) v = rng.normal();
  EXPECT_EQ(predict(back.params, back.config, x), predict(ck.params, ck.config, x));
}

TEST(Checkpoint, ReserializationIsByteIdentical) {
  const std::string bytes = serialize_checkpoint(make_checkpoint(4));
  EXPECT_EQ(serialize_checkpoint(deserialize_checkpoint(bytes)), bytes);
  EXPECT_EQ(serialize_checkpoint(make_checkpoint(4)), bytes);
}

TEST(Checkpoint, TruncationIsCorruption) {
  const std::string bytes = serialize_checkpoint(make_checkpoint());
  for (std::size_t cut : {std::size_t{3}, std::size_t{12}, bytes.size() / 2, bytes.size() - 1})
    EXPECT_THROW(deserialize_checkpoint(std::string_view(bytes).substr(0, cut)), CorruptionError) << cut;
}

TEST(Checkpoint, FlippedByteFailsChecksum) {
  std::string bytes = serialize_checkpoint(make_checkpoint());
  bytes[bytes.size() / 2] ^= 0x01;
  try {
    deserialize_checkpoint(bytes);
    FAIL() << "expected CorruptionError";
  } catch (const CorruptionError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
}

TEST(Checkpoint, UnknownVersionIsRejected) {
  std::string bytes = serialize_checkpoint(make_checkpoint());
  bytes[8] = 2;
  EXPECT_THROW(deserialize_checkpoint(with_fresh_checksum(bytes)), UnsupportedVersionError);
}

TEST(Checkpoint, ForeignFileIsAFormatError) {
  EXPECT_THROW(deserialize_checkpoint("PK\x03\x04 this is a zip file, not a checkpoint"), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/model.dsfm"), FormatError);
}

TEST(Checkpoint, MismatchedStatisticsAreRejectedOnSave) {
  Checkpoint ck = make_checkpoint();
  ck.var_names.pop_back();
  EXPECT_THROW(serialize_checkpoint(ck), DimensionError);
}

TEST(Checkpoint, ConfigJsonRoundTrip) {
  ModelConfig c;
  c.var_mode = VarAxisMode::subsequences;
  c.n_vars = 4;
  c.ablate.ta = true;
  c.decoder_hidden = 9;
  c.scale_temporal = true;
  ModelConfig back = config_from_json(config_to_json(c));
  EXPECT_EQ(back.var_mode, VarAxisMode::subsequences);
  EXPECT_EQ(back.ablate, c.ablate);
  EXPECT_EQ(back.decoder_hidden, 9u);
  EXPECT_TRUE(back.scale_temporal);
}
