#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "refseg/core/bytes.hpp"
#include "refseg/core/errors.hpp"
#include "refseg/train/optimizer.hpp"

// Checkpoint format (little-endian):
//   magic "RSCK", u32 version, u64 config_hash, u32 next_epoch,
//   u64 adam_steps, u32 slot count,
//   per slot: name (u32 len + bytes), u32 rank, u32 dims...,
//             f32 param data, f32 adam m, f32 adam v,
//   history JSON (u32 len + bytes)

namespace refseg::train {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  int next_epoch = 0;
  std::int64_t adam_steps = 0;
  nlohmann::json history = nlohmann::json::array();
};

template <typename Real>
void save_checkpoint(const std::string& path, std::uint64_t config_hash,
                     const std::vector<ParamSlot<Real>>& slots, const CheckpointInfo& info) {
  std::vector<std::uint8_t> buf;
  buf.push_back('R');
  buf.push_back('S');
  buf.push_back('C');
  buf.push_back('K');
  bytes::put_u32(buf, kCheckpointVersion);
  bytes::put_u64(buf, config_hash);
  bytes::put_u32(buf, static_cast<std::uint32_t>(info.next_epoch));
  bytes::put_u64(buf, static_cast<std::uint64_t>(info.adam_steps));
  bytes::put_u32(buf, static_cast<std::uint32_t>(slots.size()));
  for (const auto& s : slots) {
    bytes::put_u32(buf, static_cast<std::uint32_t>(s.name.size()));
    buf.insert(buf.end(), s.name.begin(), s.name.end());
    const auto& shape = s.param->shape();
    bytes::put_u32(buf, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) bytes::put_u32(buf, static_cast<std::uint32_t>(d));
    for (std::int64_t i = 0; i < s.param->size(); ++i)
      bytes::put_f32(buf, static_cast<float>((*s.param)[i]));
    for (std::int64_t i = 0; i < s.m.size(); ++i) bytes::put_f32(buf, static_cast<float>(s.m[i]));
    for (std::int64_t i = 0; i < s.v.size(); ++i) bytes::put_f32(buf, static_cast<float>(s.v[i]));
  }
  const std::string hist = info.history.dump();
  bytes::put_u32(buf, static_cast<std::uint32_t>(hist.size()));
  buf.insert(buf.end(), hist.begin(), hist.end());
  bytes::write_file(path, buf);
}

template <typename Real>
CheckpointInfo load_checkpoint(const std::string& path, std::uint64_t config_hash,
                               std::vector<ParamSlot<Real>>& slots) {
  const auto buf = bytes::read_file(path);
  if (buf.size() < 8 || buf[0] != 'R' || buf[1] != 'S' || buf[2] != 'C' || buf[3] != 'K')
    throw IoError("bad checkpoint magic in " + path);
  bytes::Reader r(buf.data() + 4, buf.size() - 4, path);
  if (r.u32() != kCheckpointVersion) throw IoError("unsupported checkpoint version in " + path);
  const std::uint64_t stored_hash = r.u64();
  if (stored_hash != config_hash)
    throw ValidationError("checkpoint config hash mismatch in " + path);
  CheckpointInfo info;
  info.next_epoch = static_cast<int>(r.u32());
  info.adam_steps = static_cast<std::int64_t>(r.u64());
  const std::uint32_t n = r.u32();
  if (n != slots.size()) throw ValidationError("checkpoint slot count mismatch in " + path);
  for (auto& s : slots) {
    const std::uint32_t name_len = r.u32();
    std::string name(name_len, '\0');
    r.raw(reinterpret_cast<std::uint8_t*>(name.data()), name_len);
    if (name != s.name) throw ValidationError("checkpoint parameter order mismatch: " + name);
    const std::uint32_t rank = r.u32();
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(r.u32());
    if (shape != s.param->shape())
      throw ValidationError("checkpoint shape mismatch for " + name);
    for (std::int64_t i = 0; i < s.param->size(); ++i) (*s.param)[i] = static_cast<Real>(r.f32());
    for (std::int64_t i = 0; i < s.m.size(); ++i) s.m[i] = static_cast<Real>(r.f32());
    for (std::int64_t i = 0; i < s.v.size(); ++i) s.v[i] = static_cast<Real>(r.f32());
  }
  const std::uint32_t hist_len = r.u32();
  std::string hist(hist_len, '\0');
  r.raw(reinterpret_cast<std::uint8_t*>(hist.data()), hist_len);
  r.expect_eof();
  info.history = nlohmann::json::parse(hist);
  return info;
}

}  // namespace refseg::train
