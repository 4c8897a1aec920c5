#pragma once

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gla/io.hpp"
#include "gla/scene/scene.hpp"

namespace gla {

// Sample record layout (little-endian, version 1):
//   magic "GLAS" | u32 version
//   u64 sample_id | u64 seed
//   u8 language_tag | u8 poisoned | u8 question_template | u8 has_mask
//   u32 side | u32 channels | f64[side*side*channels] pixels (HWC)
//   u32 n_walls  | n_walls  x (i32 x0, y0, x1, y1)
//   u32 n_agents | n_agents x (i32 x0, y0, x1, y1, u8 class)
//   u32 n_question | u16[n_question]
//   u32 n_answer   | u16[n_answer]
//   if has_mask: u32 source_region | u8[side*side] bitmap
inline constexpr std::uint32_t kSampleVersion = 1;

struct SampleRecord {
  SceneSample sample;
  bool poisoned = false;
  std::optional<SemanticMask> mask;

  bool operator==(const SampleRecord&) const = default;
};

inline std::vector<std::uint8_t> encode_sample(const SampleRecord& rec) {
  const auto& s = rec.sample;
  io::ByteWriter w;
  w.text("GLAS");
  w.u32(kSampleVersion);
  w.u64(s.sample_id);
  w.u64(s.seed);
  w.u8(static_cast<std::uint8_t>(s.language_tag));
  w.u8(rec.poisoned ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(s.question_template));
  w.u8(rec.mask ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(s.image.side));
  w.u32(static_cast<std::uint32_t>(s.image.channels));
  w.f64s(s.image.pixels);
  w.u32(static_cast<std::uint32_t>(s.wall_regions.size()));
  for (const auto& r : s.wall_regions) {
    w.i32(r.x0), w.i32(r.y0), w.i32(r.x1), w.i32(r.y1);
  }
  w.u32(static_cast<std::uint32_t>(s.agent_boxes.size()));
  for (const auto& a : s.agent_boxes) {
    w.i32(a.box.x0), w.i32(a.box.y0), w.i32(a.box.x1), w.i32(a.box.y1);
    w.u8(static_cast<std::uint8_t>(a.cls));
  }
  auto tokens = [&](const std::vector<int>& seq) {
    w.u32(static_cast<std::uint32_t>(seq.size()));
    for (int t : seq) w.u16(static_cast<std::uint16_t>(t));
  };
  tokens(s.question);
  tokens(s.answer);
  if (rec.mask) {
    w.u32(rec.mask->source_region);
    w.bytes(rec.mask->bitmap);
  }
  return w.take();
}

inline SampleRecord decode_sample(std::span<const std::uint8_t> data, const std::string& context) {
  io::ByteReader r(data, context);
  auto magic = r.bytes(4);
  if (std::string(magic.begin(), magic.end()) != "GLAS") throw CorruptionError(context + ": bad sample magic");
  if (auto v = r.u32(); v != kSampleVersion) {
    throw CorruptionError(context + ": unsupported sample version " + std::to_string(v));
  }
  SampleRecord rec;
  auto& s = rec.sample;
  s.sample_id = r.u64();
  s.seed = r.u64();
  const auto tag = r.u8();
  const auto poisoned = r.u8();
  const auto tmpl = r.u8();
  const auto has_mask = r.u8();
  if (tag > 1 || poisoned > 1 || tmpl > 2 || has_mask > 1) r.fail("sample flags");
  s.language_tag = static_cast<LanguageTag>(tag);
  rec.poisoned = poisoned == 1;
  s.question_template = static_cast<QuestionTemplate>(tmpl);
  s.image.side = r.u32();
  s.image.channels = r.u32();
  if (s.image.side > 4096 || s.image.channels > 4) r.fail("image header");
  s.image.pixels = r.f64s(s.image.side * s.image.side * s.image.channels);
  const auto n_walls = r.u32();
  if (n_walls > 64) r.fail("wall table");
  for (std::uint32_t i = 0; i < n_walls; ++i) {
    Rect rect;
    rect.x0 = r.i32(), rect.y0 = r.i32(), rect.x1 = r.i32(), rect.y1 = r.i32();
    s.wall_regions.push_back(rect);
  }
  const auto n_agents = r.u32();
  if (n_agents > 64) r.fail("agent table");
  for (std::uint32_t i = 0; i < n_agents; ++i) {
    AgentBox a;
    a.box.x0 = r.i32(), a.box.y0 = r.i32(), a.box.x1 = r.i32(), a.box.y1 = r.i32();
    const auto cls = r.u8();
    if (cls > 2) r.fail("agent class");
    a.cls = static_cast<AgentClass>(cls);
    s.agent_boxes.push_back(a);
  }
  auto tokens = [&](std::vector<int>& seq) {
    const auto n = r.u32();
    if (n > 1024) r.fail("token sequence");
    for (std::uint32_t i = 0; i < n; ++i) seq.push_back(r.u16());
  };
  tokens(s.question);
  tokens(s.answer);
  if (has_mask) {
    SemanticMask m;
    m.side = s.image.side;
    m.source_region = r.u32();
    auto raw = r.bytes(m.side * m.side);
    m.bitmap.assign(raw.begin(), raw.end());
    rec.mask = std::move(m);
  }
  r.expect_end();
  return rec;
}

struct ManifestEntry {
  std::string id;
  std::string split;
  std::uint64_t index = 0;
  std::uint64_t sample_id = 0;
  std::uint64_t seed = 0;
  std::string file;
  std::string sha256;
  bool poisoned = false;
  std::string source_id;  // original sample for poisoned entries
};

struct PoisonBookkeeping {
  std::string cell;
  std::string trigger_kind;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::size_t eligible = 0;
  std::vector<std::string> poisoned_ids;
};

inline constexpr const char* kSplitTrain = "train";
inline constexpr const char* kSplitCleanTest = "clean_test";
inline constexpr const char* kSplitTriggerTest = "trigger_test";

struct DatasetManifest {
  std::uint64_t global_seed = 0;
  std::size_t n_train = 0, n_clean_test = 0, n_trigger_test = 0;
  std::vector<ManifestEntry> samples;
  std::optional<PoisonBookkeeping> poison;

  std::vector<const ManifestEntry*> split(const std::string& name) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : samples)
      if (e.split == name) out.push_back(&e);
    return out;
  }

  nlohmann::json samples_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : samples) {
      nlohmann::json j = {{"id", e.id},         {"split", e.split},   {"index", e.index},
                          {"sample_id", e.sample_id}, {"seed", e.seed}, {"file", e.file},
                          {"sha256", e.sha256}, {"poisoned", e.poisoned}};
      if (e.poisoned) j["source_id"] = e.source_id;
      arr.push_back(std::move(j));
    }
    return arr;
  }

  // Hash of the sample table alone (poison bookkeeping excluded).
  std::string samples_hash() const { return io::sha256_hex(samples_json().dump()); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["global_seed"] = global_seed;
    j["splits"] = {{kSplitTrain, n_train}, {kSplitCleanTest, n_clean_test}, {kSplitTriggerTest, n_trigger_test}};
    j["samples"] = samples_json();
    if (poison) {
      j["poison"] = {{"cell", poison->cell},         {"trigger_kind", poison->trigger_kind},
                     {"ratio", poison->ratio},       {"seed", poison->seed},
                     {"eligible", poison->eligible}, {"poisoned_ids", poison->poisoned_ids}};
    } else {
      j["poison"] = nullptr;
    }
    return j;
  }

  static DatasetManifest from_json(const nlohmann::json& j) {
    try {
      if (j.at("schema_version").get<int>() != 1) throw ValidationError("unsupported manifest schema version");
      DatasetManifest m;
      m.global_seed = j.at("global_seed").get<std::uint64_t>();
      m.n_train = j.at("splits").at(kSplitTrain).get<std::size_t>();
      m.n_clean_test = j.at("splits").at(kSplitCleanTest).get<std::size_t>();
      m.n_trigger_test = j.at("splits").at(kSplitTriggerTest).get<std::size_t>();
      for (const auto& s : j.at("samples")) {
        ManifestEntry e;
        e.id = s.at("id").get<std::string>();
        e.split = s.at("split").get<std::string>();
        e.index = s.at("index").get<std::uint64_t>();
        e.sample_id = s.at("sample_id").get<std::uint64_t>();
        e.seed = s.at("seed").get<std::uint64_t>();
        e.file = s.at("file").get<std::string>();
        e.sha256 = s.at("sha256").get<std::string>();
        e.poisoned = s.at("poisoned").get<bool>();
        if (e.poisoned) e.source_id = s.at("source_id").get<std::string>();
        m.samples.push_back(std::move(e));
      }
      if (!j.at("poison").is_null()) {
        const auto& p = j.at("poison");
        PoisonBookkeeping b;
        b.cell = p.at("cell").get<std::string>();
        b.trigger_kind = p.at("trigger_kind").get<std::string>();
        b.ratio = p.at("ratio").get<double>();
        b.seed = p.at("seed").get<std::uint64_t>();
        b.eligible = p.at("eligible").get<std::size_t>();
        b.poisoned_ids = p.at("poisoned_ids").get<std::vector<std::string>>();
        m.poison = std::move(b);
      }
      if (m.split(kSplitTrain).size() != m.n_train || m.split(kSplitCleanTest).size() != m.n_clean_test ||
          m.split(kSplitTriggerTest).size() != m.n_trigger_test) {
        throw ValidationError("manifest sample count does not match split sizes");
      }
      return m;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("malformed manifest: ") + e.what());
    }
  }

  void save(const std::filesystem::path& path) const { io::write_text_atomic(path, to_json().dump(1) + "\n"); }

  static DatasetManifest load(const std::filesystem::path& path) {
    const auto text = io::read_text(path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ": " + e.what());
    }
    return from_json(j);
  }
};

inline std::uint64_t split_salt(const std::string& split) {
  if (split == kSplitTrain) return 1;
  if (split == kSplitCleanTest) return 2;
  if (split == kSplitTriggerTest) return 3;
  throw ValidationError("unknown split '" + split + "'");
}

// Per-sample seed: depends only on (global seed, split, index), so datasets of
// different sizes share a prefix of seeds.
inline std::uint64_t sample_seed(std::uint64_t global_seed, const std::string& split, std::uint64_t index) {
  return derive_seed(derive_seed(global_seed, split_salt(split)), index);
}

inline std::string entry_id(const std::string& split, std::uint64_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(index));
  return split + "/" + buf;
}

inline void write_sample_file(const std::filesystem::path& path, const SampleRecord& rec) {
  io::write_file_atomic(path, encode_sample(rec));
}

inline SampleRecord read_sample_file(const std::filesystem::path& path) {
  return decode_sample(io::read_file(path), path.string());
}

// Generates every split, writes one record per sample and the manifest.
// Record paths in the manifest are relative to root and start with prefix;
// the manifest itself goes to root/prefix/manifest.json.
inline DatasetManifest build_dataset(const std::filesystem::path& root, std::size_t n_train, std::size_t n_clean_test,
                                     std::size_t n_trigger_test, std::uint64_t seed, const std::string& prefix = "") {
  DatasetManifest m;
  m.global_seed = seed;
  m.n_train = n_train;
  m.n_clean_test = n_clean_test;
  m.n_trigger_test = n_trigger_test;
  std::uint64_t next_id = 0;
  for (const auto& [split, n] : {std::pair<std::string, std::size_t>{kSplitTrain, n_train},
                                 {kSplitCleanTest, n_clean_test},
                                 {kSplitTriggerTest, n_trigger_test}}) {
    for (std::size_t i = 0; i < n; ++i) {
      ManifestEntry e;
      e.split = split;
      e.index = i;
      e.id = entry_id(split, i);
      e.seed = sample_seed(seed, split, i);
      e.sample_id = next_id++;
      e.file = prefix + "samples/" + e.id + ".bin";
      SampleRecord rec{generate_scene(e.seed, e.sample_id), false, std::nullopt};
      const auto bytes = encode_sample(rec);
      e.sha256 = io::sha256_hex(bytes);
      io::write_file_atomic(root / e.file, bytes);
      m.samples.push_back(std::move(e));
    }
  }
  m.save(root / prefix / "manifest.json");
  return m;
}

// Loads and hash-verifies the records of one split.
inline std::vector<SampleRecord> load_split(const std::filesystem::path& root, const DatasetManifest& m,
                                            const std::string& split) {
  std::vector<SampleRecord> out;
  for (const auto* e : m.split(split)) {
    const auto bytes = io::read_file(root / e->file);
    if (io::sha256_hex(bytes) != e->sha256) {
      throw CorruptionError((root / e->file).string() + ": content hash does not match manifest");
    }
    out.push_back(decode_sample(bytes, (root / e->file).string()));
  }
  return out;
}

}  // namespace gla
