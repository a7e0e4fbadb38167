#pragma once

// Binary checkpoint: model config, normalization statistics and every parameter
// as little-endian float32, closed by an FNV-1a checksum.
//
//   "DSFMCKPT"            8 bytes
//   version               u32
//   header length, JSON   u32, bytes   (sorted keys)
//   N, mean[N], std[N]    u32, f64 × N, f64 × N
//   parameter count       u32
//     name length, name   u16, bytes
//     rank, dims          u8, u32 × rank
//     values              f32 × numel
//   checksum              u64 over every preceding byte

#include "dsformer/data.hpp"
#include "dsformer/errors.hpp"
#include "dsformer/model.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace dsformer {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "DSFMCKPT";

struct Checkpoint {
  ModelConfig config;
  NormStats stats;
  std::vector<std::string> var_names;
  ModelParams params;
  std::string dataset;
  SplitRatios split;
  std::uint64_t seed = 0;
};

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"n_vars", c.n_vars},
                        {"history", c.history},
                        {"horizon", c.horizon},
                        {"interval", c.interval},
                        {"heads", c.heads},
                        {"dropout", c.dropout},
                        {"var_attn", std::string(to_string(c.var_mode))},
                        {"ablate", ablation_name(c.ablate)},
                        {"w_l1", c.w_l1},
                        {"decoder_hidden", c.decoder_hidden},
                        {"scale_temporal", c.scale_temporal}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_vars = j.at("n_vars").get<std::size_t>();
  c.history = j.at("history").get<std::size_t>();
  c.horizon = j.at("horizon").get<std::size_t>();
  c.interval = j.at("interval").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.var_mode = parse_var_axis_mode(j.at("var_attn").get<std::string>());
  c.ablate = parse_ablation(j.at("ablate").get<std::string>());
  c.w_l1 = j.at("w_l1").get<double>();
  c.decoder_hidden = j.value("decoder_hidden", std::size_t{0});
  c.scale_temporal = j.value("scale_temporal", false);
  c.validate();
  return c;
}

namespace detail {

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
public:
  void bytes(std::string_view s) { buf_.append(s); }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(double v) { uint(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  std::string& str() { return buf_; }

private:
  std::string buf_;
};

class Reader {
public:
  explicit Reader(std::string_view data) : data_(data) {}
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename U>
  U uint() {
    auto s = bytes(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(uint<std::uint32_t>())); }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  bool done() const { return pos_ == data_.size(); }

private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw CorruptionError("checkpoint ends early");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

} // namespace detail

/// Serialized bytes; identical inputs always give identical output.
inline std::string serialize_checkpoint(const Checkpoint& ck) {
  const std::size_t n = ck.config.n_vars;
  if (ck.stats.mean.size() != n || ck.stats.std.size() != n || ck.var_names.size() != n)
    throw DimensionError("checkpoint statistics and names must cover N=" + std::to_string(n) + " variables");

  nlohmann::json header{{"format", "dsformer.checkpoint"},
                        {"model", config_to_json(ck.config)},
                        {"variables", ck.var_names},
                        {"dataset", ck.dataset},
                        {"split", {ck.split.train, ck.split.val, ck.split.test}},
                        {"seed", ck.seed}};
  const std::string hs = header.dump();

  detail::Writer w;
  w.bytes(kCheckpointMagic);
  w.uint<std::uint32_t>(kCheckpointVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(hs.size()));
  w.bytes(hs);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(n));
  for (double m : ck.stats.mean) w.f64(m);
  for (double s : ck.stats.std) w.f64(s);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(ck.params.store.size()));
  for (const auto& p : ck.params.store) {
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(p.name.size()));
    w.bytes(p.name);
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) w.uint<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : p.value.data()) w.f32(v);
  }
  w.uint<std::uint64_t>(detail::fnv1a(w.str()));
  return std::move(w.str());
}

/// Parses checkpoint bytes. Checksum failures and truncation raise CorruptionError,
/// an unknown format version UnsupportedVersionError. Nothing is returned on failure.
inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
  constexpr std::size_t min_size = kCheckpointMagic.size() + 4 + 8;
  if (bytes.size() < kCheckpointMagic.size() || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    if (bytes.size() < kCheckpointMagic.size() && kCheckpointMagic.substr(0, bytes.size()) == bytes)
      throw CorruptionError("checkpoint is truncated");
    throw FormatError("not a checkpoint file (bad magic)");
  }
  if (bytes.size() < min_size) throw CorruptionError("checkpoint is truncated");
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  detail::Reader tail(bytes.substr(bytes.size() - 8));
  if (tail.uint<std::uint64_t>() != detail::fnv1a(body))
    throw CorruptionError("checkpoint checksum mismatch (file is corrupted or truncated)");

  detail::Reader r(body);
  r.bytes(kCheckpointMagic.size());
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw UnsupportedVersionError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                                  std::to_string(kCheckpointVersion) + ")");

  Checkpoint ck;
  const auto hlen = r.uint<std::uint32_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.bytes(hlen));
    ck.config = config_from_json(header.at("model"));
    ck.var_names = header.at("variables").get<std::vector<std::string>>();
    ck.dataset = header.value("dataset", std::string());
    ck.seed = header.value("seed", std::uint64_t{0});
    if (header.contains("split")) {
      const auto r = header["split"].get<std::vector<double>>();
      if (r.size() != 3) throw FormatError("checkpoint split needs three ratios");
      ck.split = {r[0], r[1], r[2]};
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }

  const auto n = r.uint<std::uint32_t>();
  if (n != ck.config.n_vars || ck.var_names.size() != n)
    throw FormatError("checkpoint statistics cover " + std::to_string(n) + " variables, model has " +
                      std::to_string(ck.config.n_vars));
  ck.stats.mean.resize(n);
  ck.stats.std.resize(n);
  for (auto& m : ck.stats.mean) m = r.f64();
  for (auto& s : ck.stats.std) s = r.f64();

  ck.params = init_params(ck.config, 0);
  const auto count = r.uint<std::uint32_t>();
  if (count != ck.params.store.size())
    throw FormatError("checkpoint has " + std::to_string(count) + " parameters, configuration needs " +
                      std::to_string(ck.params.store.size()));
  std::vector<bool> seen(count, false);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.uint<std::uint16_t>();
    const std::string name(r.bytes(len));
    if (!ck.params.store.contains(name)) throw FormatError("checkpoint parameter '" + name + "' is not in the model");
    const std::size_t id = ck.params.store.id_of(name);
    if (seen[id]) throw FormatError("checkpoint repeats parameter '" + name + "'");
    seen[id] = true;
    const auto rank = r.uint<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.uint<std::uint32_t>();
    Parameter& p = ck.params.store[id];
    if (shape != p.value.shape())
      throw FormatError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) + ", expected " +
                        shape_str(p.value.shape()));
    for (auto& v : p.value.storage()) v = r.f32();
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint parameters");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

} // namespace dsformer
