// Checkpoint serialization. Layout: magic "SKWS", u32 format version, u64
// header length, a UTF-8 JSON header (config, training metadata, tensor
// directory), the tensor payloads as little-endian float32 in directory
// order, and a trailing CRC32 over everything before it. Round trips are
// byte-identical.
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "sinckws/model.hpp"

namespace sinckws {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t n) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int bit = 0; bit < 8; ++bit)
        c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i)
    crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline nlohmann::ordered_json config_to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["variant"] = variant_name(cfg.variant);
  j["n_classes"] = cfg.n_classes;
  j["sinc"] = {{"n_filters", cfg.sinc.n_filters},
               {"kernel_length", cfg.sinc.kernel_length},
               {"stride", cfg.sinc.stride},
               {"sample_rate", cfg.sinc.sample_rate},
               {"min_band_hz", cfg.sinc.min_band_hz},
               {"min_low_hz", cfg.sinc.min_low_hz}};
  j["blocks"] = nlohmann::ordered_json::array();
  for (const auto& b : cfg.blocks)
    j["blocks"].push_back({{"c_in", b.conv.c_in},
                           {"c_out", b.conv.c_out},
                           {"k", b.conv.k},
                           {"s", b.conv.s},
                           {"g", b.conv.g},
                           {"pool_width", b.pool_width},
                           {"pool_stride", b.pool_stride},
                           {"dropout", b.dropout}});
  return j;
}

inline ModelConfig config_from_json(const nlohmann::ordered_json& j) {
  ModelConfig cfg;
  cfg.variant = variant_from_name(j.at("variant").get<std::string>());
  cfg.n_classes = j.at("n_classes").get<int>();
  const auto& s = j.at("sinc");
  cfg.sinc.n_filters = s.at("n_filters").get<int>();
  cfg.sinc.kernel_length = s.at("kernel_length").get<int>();
  cfg.sinc.stride = s.at("stride").get<int>();
  cfg.sinc.sample_rate = s.at("sample_rate").get<double>();
  cfg.sinc.min_band_hz = s.at("min_band_hz").get<double>();
  cfg.sinc.min_low_hz = s.at("min_low_hz").get<double>();
  for (const auto& bj : j.at("blocks")) {
    BlockSpec b;
    b.conv.c_in = bj.at("c_in").get<int>();
    b.conv.c_out = bj.at("c_out").get<int>();
    b.conv.k = bj.at("k").get<int>();
    b.conv.s = bj.at("s").get<int>();
    b.conv.g = bj.at("g").get<int>();
    b.pool_width = bj.at("pool_width").get<int>();
    b.pool_stride = bj.at("pool_stride").get<int>();
    b.dropout = bj.at("dropout").get<double>();
    cfg.blocks.push_back(b);
  }
  return cfg;
}

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const Model<T>& m) {
  auto tensors = m.named_parameters();
  for (auto& nb : m.named_buffers()) tensors.push_back(nb);

  nlohmann::ordered_json header;
  header["config"] = config_to_json(m.config);
  header["metadata"] = {{"epoch", m.epoch},
                        {"best_val_accuracy", m.best_val_accuracy},
                        {"seed", m.seed}};
  header["bn_updates"] = nlohmann::ordered_json::array();
  for (const auto& b : m.blocks) header["bn_updates"].push_back(b.bn.updates);
  header["tensors"] = nlohmann::ordered_json::array();
  for (const auto& [name, tensor] : tensors)
    header["tensors"].push_back({{"name", name}, {"shape", tensor->shape}});
  const std::string htext = header.dump();

  std::vector<std::uint8_t> bytes;
  bytes.reserve(htext.size() + 64);
  bytes.insert(bytes.end(), {'S', 'K', 'W', 'S'});
  detail::put_u32(bytes, kCheckpointVersion);
  detail::put_u64(bytes, htext.size());
  bytes.insert(bytes.end(), htext.begin(), htext.end());
  for (const auto& [name, tensor] : tensors)
    for (const T& v : tensor->values)
      detail::put_u32(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  detail::put_u32(bytes, detail::crc32(bytes.data(), bytes.size()));
  return bytes;
}

template <typename T>
void save_checkpoint(const Model<T>& m, const std::string& path) {
  const auto bytes = serialize_checkpoint(m);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot open checkpoint for writing: " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw io_error("short write to checkpoint: " + path);
}

template <typename T>
Model<T> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes,
                                const std::string& origin) {
  if (bytes.size() < 20) throw io_error("checkpoint truncated: " + origin);
  if (std::memcmp(bytes.data(), "SKWS", 4) != 0)
    throw io_error("not a checkpoint file (bad magic): " + origin);
  const std::uint32_t stored_crc = detail::get_u32(bytes.data() + bytes.size() - 4);
  if (detail::crc32(bytes.data(), bytes.size() - 4) != stored_crc)
    throw io_error("checkpoint checksum mismatch: " + origin);
  const std::uint32_t version = detail::get_u32(bytes.data() + 4);
  if (version != kCheckpointVersion)
    throw io_error("unsupported checkpoint version " + std::to_string(version) + ": " +
                   origin);
  const std::uint64_t hlen = detail::get_u64(bytes.data() + 8);
  if (16 + hlen + 4 > bytes.size()) throw io_error("checkpoint truncated: " + origin);

  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(bytes.begin() + 16,
                                           bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception&) {
    throw io_error("checkpoint header is not valid JSON: " + origin);
  }

  Model<T> m;
  try {
    const auto cfg = config_from_json(header.at("config"));
    const auto& meta = header.at("metadata");
    m = build_model<T>(cfg, meta.at("seed").get<std::uint64_t>());
    m.epoch = meta.at("epoch").get<int>();
    m.best_val_accuracy = meta.at("best_val_accuracy").get<double>();
    const auto& updates = header.at("bn_updates");
    if (updates.size() != m.blocks.size())
      throw io_error("checkpoint batchnorm state count mismatch: " + origin);
    for (std::size_t i = 0; i < m.blocks.size(); ++i)
      m.blocks[i].bn.updates = updates[i].get<long long>();

    auto tensors = m.named_parameters();
    for (auto& nb : m.named_buffers()) tensors.push_back(nb);
    const auto& dir = header.at("tensors");
    if (dir.size() != tensors.size())
      throw io_error("checkpoint tensor directory size mismatch: " + origin);

    std::size_t offset = 16 + hlen;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const std::string name = dir[i].at("name").get<std::string>();
      if (name != tensors[i].first)
        throw io_error("unknown tensor name in checkpoint: " + name + " (" + origin + ")");
      const auto shape = dir[i].at("shape").get<std::vector<int>>();
      if (shape != tensors[i].second->shape)
        throw io_error("tensor shape mismatch for " + name + ": " + origin);
      auto& values = tensors[i].second->values;
      if (offset + 4 * values.size() + 4 > bytes.size())
        throw io_error("checkpoint truncated: " + origin);
      for (auto& v : values) {
        v = static_cast<T>(std::bit_cast<float>(detail::get_u32(bytes.data() + offset)));
        offset += 4;
      }
    }
    if (offset + 4 != bytes.size())
      throw io_error("checkpoint has trailing bytes: " + origin);
  } catch (const nlohmann::json::exception&) {
    throw io_error("checkpoint header is missing required fields: " + origin);
  } catch (const std::invalid_argument& e) {
    throw io_error("checkpoint carries an invalid config (" + std::string(e.what()) +
                   "): " + origin);
  }
  return m;
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open checkpoint: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint<T>(bytes, path);
}

}  // namespace sinckws
