#pragma once

// Parameter checkpoint file:
//
//   magic    8 bytes  "TGCKPT\0\0"
//   version  u32
//   count    u64
//   count x { name_len u32, name bytes, rank u32, dims u64[rank], values f64[numel] }
//
// All integers and floats little-endian.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "trajgraft/error.hpp"
#include "trajgraft/nn.hpp"

namespace trajgraft {

inline constexpr char kCheckpointMagic[8] = {'T', 'G', 'C', 'K', 'P', 'T', '\0', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  Shape shape;
  std::vector<double> values;
  bool operator==(const CheckpointEntry&) const = default;
};

using Checkpoint = std::map<std::string, CheckpointEntry>;

namespace detail {

template <class T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw ConfigError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

inline Checkpoint snapshot(const ParameterSet& params) {
  Checkpoint ck;
  for (const auto& [name, t] : params) ck[name] = {t.shape(), {t.data().begin(), t.data().end()}};
  return ck;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open '" + path + "' for writing");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_le<std::uint32_t>(os, kCheckpointVersion);
  detail::write_le<std::uint64_t>(os, ck.size());
  for (const auto& [name, entry] : ck) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(entry.shape.size()));
    for (auto d : entry.shape) detail::write_le<std::uint64_t>(os, d);
    for (double v : entry.values) detail::write_le<double>(os, v);
  }
  if (!os) throw ConfigError("failed writing checkpoint '" + path + "'");
}

inline void save_checkpoint(const std::string& path, const ParameterSet& params) {
  write_checkpoint(path, snapshot(params));
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint '" + path + "'");
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw ConfigError("'" + path + "' is not a checkpoint file");
  }
  const auto version = detail::read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::read_le<std::uint64_t>(is);
  Checkpoint ck;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = detail::read_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw ConfigError("checkpoint truncated");
    CheckpointEntry entry;
    const auto rank = detail::read_le<std::uint32_t>(is);
    for (std::uint32_t r = 0; r < rank; ++r) entry.shape.push_back(detail::read_le<std::uint64_t>(is));
    entry.values.resize(shape_numel(entry.shape));
    for (auto& v : entry.values) v = detail::read_le<double>(is);
    ck.emplace(std::move(name), std::move(entry));
  }
  return ck;
}

// Copies values into an existing parameter set; names and shapes must match exactly.
inline void restore(ParameterSet& params, const Checkpoint& ck) {
  if (ck.size() != params.size()) {
    throw ConfigError("checkpoint has " + std::to_string(ck.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
  }
  for (auto& [name, t] : params) {
    auto it = ck.find(name);
    if (it == ck.end()) throw ConfigError("checkpoint lacks parameter '" + name + "'");
    if (it->second.shape != t.shape()) {
      throw ConfigError("parameter '" + name + "' has shape " + shape_str(it->second.shape) + " in checkpoint, " +
                        shape_str(t.shape()) + " in model");
    }
    std::copy(it->second.values.begin(), it->second.values.end(), t.mutable_data().begin());
  }
}

inline void load_checkpoint(const std::string& path, ParameterSet& params) { restore(params, read_checkpoint(path)); }

}  // namespace trajgraft
