#pragma once

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "refseg/core/bytes.hpp"
#include "refseg/core/errors.hpp"
#include "refseg/synthgen/generate.hpp"
#include "refseg/synthgen/types.hpp"
#include "refseg/synthgen/vocab.hpp"

// Dataset directory layout:
//   manifest.json              human-readable manifest
//   sample_00000.bin ...       one binary record per sample
//
// Record format (little-endian):
//   magic "RSG1", u32 version,
//   u32 t, c, h, w, ti, l_max, token_len, n_inst, referred_idx,
//   u32 interest[ti], u32 tokens[l_max],
//   u8 frames[t*c*h*w],
//   per instance: u64 mask_words[ti * ceil(h*w/64)],
//   u8 gt_ref[n_inst * ti]

namespace refseg::synthgen {

inline constexpr std::uint32_t kRecordVersion = 1;

inline nlohmann::json config_to_json(const GeneratorConfig& c) {
  return nlohmann::json{{"t", c.t},
                        {"height", c.height},
                        {"width", c.width},
                        {"ti_policy", c.ti_policy},
                        {"distractors_min", c.distractors_min},
                        {"distractors_max", c.distractors_max},
                        {"exit_prob", c.exit_prob},
                        {"static_prob", c.static_prob},
                        {"size_min", c.size_min},
                        {"size_max", c.size_max},
                        {"speed_min", c.speed_min},
                        {"speed_max", c.speed_max},
                        {"motion_subset", c.motion_subset},
                        {"l_max", c.l_max},
                        {"max_retries", c.max_retries}};
}

inline GeneratorConfig config_from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.t = j.at("t").get<int>();
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.ti_policy = j.at("ti_policy").get<std::string>();
  c.distractors_min = j.at("distractors_min").get<int>();
  c.distractors_max = j.at("distractors_max").get<int>();
  c.exit_prob = j.at("exit_prob").get<double>();
  c.static_prob = j.at("static_prob").get<double>();
  c.size_min = j.at("size_min").get<int>();
  c.size_max = j.at("size_max").get<int>();
  c.speed_min = j.at("speed_min").get<int>();
  c.speed_max = j.at("speed_max").get<int>();
  c.motion_subset = j.at("motion_subset").get<bool>();
  c.l_max = j.at("l_max").get<int>();
  c.max_retries = j.at("max_retries").get<int>();
  return c;
}

inline std::uint64_t dataset_fingerprint(const GeneratorConfig& cfg, std::uint64_t seed,
                                         int count, const std::string& split) {
  std::uint64_t h = config_fingerprint(cfg);
  h = fnv1a64(&seed, sizeof(seed), h);
  std::int64_t c = count;
  h = fnv1a64(&c, sizeof(c), h);
  h = fnv1a64(split.data(), split.size(), h);
  return h;
}

inline std::vector<std::uint8_t> encode_sample(const ReferringSample& s) {
  std::vector<std::uint8_t> buf;
  buf.reserve(s.frames.size() + 4096);
  buf.push_back('R');
  buf.push_back('S');
  buf.push_back('G');
  buf.push_back('1');
  bytes::put_u32(buf, kRecordVersion);
  const int ti = s.num_interest();
  bytes::put_u32(buf, static_cast<std::uint32_t>(s.t));
  bytes::put_u32(buf, static_cast<std::uint32_t>(s.channels));
  bytes::put_u32(buf, static_cast<std::uint32_t>(s.height));
  bytes::put_u32(buf, static_cast<std::uint32_t>(s.width));
  bytes::put_u32(buf, static_cast<std::uint32_t>(ti));
  bytes::put_u32(buf, static_cast<std::uint32_t>(s.token_ids.size()));
  bytes::put_u32(buf, static_cast<std::uint32_t>(s.token_len));
  bytes::put_u32(buf, static_cast<std::uint32_t>(s.num_instances()));
  bytes::put_u32(buf, static_cast<std::uint32_t>(s.referred_index));
  for (int i : s.frames_of_interest) bytes::put_u32(buf, static_cast<std::uint32_t>(i));
  for (int i : s.token_ids) bytes::put_u32(buf, static_cast<std::uint32_t>(i));
  buf.insert(buf.end(), s.frames.begin(), s.frames.end());
  for (const BitMasks& m : s.gt_masks)
    for (std::uint64_t w : m.words) bytes::put_u64(buf, w);
  for (const auto& r : s.gt_ref) buf.insert(buf.end(), r.begin(), r.end());
  return buf;
}

inline ReferringSample decode_sample(const std::vector<std::uint8_t>& buf,
                                     const std::string& origin) {
  if (buf.size() < 8 || buf[0] != 'R' || buf[1] != 'S' || buf[2] != 'G' || buf[3] != '1')
    throw IoError("bad sample magic in " + origin);
  bytes::Reader r(buf.data() + 4, buf.size() - 4, origin);
  if (r.u32() != kRecordVersion) throw IoError("unsupported sample version in " + origin);
  ReferringSample s;
  s.t = static_cast<int>(r.u32());
  s.channels = static_cast<int>(r.u32());
  s.height = static_cast<int>(r.u32());
  s.width = static_cast<int>(r.u32());
  const int ti = static_cast<int>(r.u32());
  const int l_max = static_cast<int>(r.u32());
  s.token_len = static_cast<int>(r.u32());
  const int n_inst = static_cast<int>(r.u32());
  s.referred_index = static_cast<int>(r.u32());
  if (s.t < 1 || s.channels != 3 || s.height < 1 || s.width < 1 || ti < 1 || l_max < 1 ||
      n_inst < 1 || s.referred_index < 0 || s.referred_index >= n_inst)
    throw IoError("inconsistent sample header in " + origin);
  s.frames_of_interest.resize(static_cast<std::size_t>(ti));
  for (int& i : s.frames_of_interest) i = static_cast<int>(r.u32());
  s.token_ids.resize(static_cast<std::size_t>(l_max));
  for (int& i : s.token_ids) i = static_cast<int>(r.u32());
  s.frames.resize(static_cast<std::size_t>(s.t) * s.channels * s.height * s.width);
  r.raw(s.frames.data(), s.frames.size());
  s.gt_masks.assign(static_cast<std::size_t>(n_inst), BitMasks::empty(ti, s.height, s.width));
  for (BitMasks& m : s.gt_masks)
    for (std::uint64_t& w : m.words) w = r.u64();
  s.gt_ref.assign(static_cast<std::size_t>(n_inst), std::vector<std::uint8_t>(static_cast<std::size_t>(ti), 0));
  for (auto& refs : s.gt_ref) r.raw(refs.data(), refs.size());
  r.expect_eof();
  return s;
}

inline std::string sample_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%05d.bin", index);
  return buf;
}

inline void save_dataset(const std::string& dir, const DatasetManifest& manifest,
                         const std::vector<ReferringSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json j{{"schema_version", 1},
                   {"split", manifest.split},
                   {"sample_count", static_cast<int>(samples.size())},
                   {"t", manifest.t},
                   {"channels", manifest.channels},
                   {"height", manifest.height},
                   {"width", manifest.width},
                   {"l_max", manifest.l_max},
                   {"seed", manifest.seed},
                   {"config", config_to_json(manifest.config)},
                   {"config_hash", manifest.config_hash},
                   {"dataset_hash", manifest.dataset_hash},
                   {"vocabulary", vocabulary_map()}};
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + dir);
  out << j.dump(2) << "\n";
  for (std::size_t i = 0; i < samples.size(); ++i)
    bytes::write_file((fs::path(dir) / sample_filename(static_cast<int>(i))).string(),
                      encode_sample(samples[i]));
}

struct Dataset {
  DatasetManifest manifest;
  std::vector<ReferringSample> samples;
};

inline DatasetManifest load_manifest(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto path = fs::path(dir) / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt manifest " + path.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.split = j.at("split").get<std::string>();
  m.sample_count = j.at("sample_count").get<int>();
  m.t = j.at("t").get<int>();
  m.channels = j.at("channels").get<int>();
  m.height = j.at("height").get<int>();
  m.width = j.at("width").get<int>();
  m.l_max = j.at("l_max").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.config = config_from_json(j.at("config"));
  m.config_hash = j.at("config_hash").get<std::uint64_t>();
  m.dataset_hash = j.at("dataset_hash").get<std::uint64_t>();
  if (config_fingerprint(m.config) != m.config_hash)
    throw ValidationError("config hash mismatch in " + path.string());
  const auto vocab = j.at("vocabulary").get<std::map<std::string, int>>();
  if (vocab != vocabulary_map())
    throw ValidationError("vocabulary mismatch in " + path.string());
  return m;
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  Dataset d;
  d.manifest = load_manifest(dir);
  d.samples.reserve(static_cast<std::size_t>(d.manifest.sample_count));
  for (int i = 0; i < d.manifest.sample_count; ++i) {
    const auto path = (fs::path(dir) / sample_filename(i)).string();
    d.samples.push_back(decode_sample(bytes::read_file(path), path));
  }
  return d;
}

// Generates `count` samples from consecutive per-sample seeds derived from
// the base seed, writes the directory, and returns the manifest.
inline DatasetManifest generate_dataset(const std::string& dir, const GeneratorConfig& cfg,
                                        std::uint64_t seed, int count, const std::string& split) {
  std::vector<ReferringSample> samples;
  samples.reserve(static_cast<std::size_t>(count));
  std::uint64_t sm = seed;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t sample_seed = splitmix64(sm);
    samples.push_back(generate_sample(sample_seed, cfg).sample);
  }
  DatasetManifest m;
  m.sample_count = count;
  m.split = split;
  m.height = cfg.height;
  m.width = cfg.width;
  m.channels = 3;
  m.t = cfg.t;
  m.l_max = cfg.l_max;
  m.seed = seed;
  m.config = cfg;
  m.config_hash = config_fingerprint(cfg);
  m.dataset_hash = dataset_fingerprint(cfg, seed, count, split);
  save_dataset(dir, m, samples);
  return m;
}

}  // namespace refseg::synthgen
