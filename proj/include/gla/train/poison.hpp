#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gla/scene/dataset.hpp"
#include "gla/triggers/triggers.hpp"

namespace gla {

struct PoisonConfig {
  double ratio = 0.10;
  double lambda = 1.0;
  TriggerSpec trigger;
  std::uint64_t seed = 7;

  void validate() const {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw ValidationError("poison ratio must lie in [0, 1]");
    if (!(lambda >= 0.0)) throw ValidationError("lambda must be non-negative");
    trigger.validate();
  }
};

inline std::size_t poison_count(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
}

// Seeded uniform choice of `count` eligible positions, returned sorted.
inline std::vector<std::size_t> select_poison_indices(const std::vector<std::size_t>& eligible, std::size_t count,
                                                      std::uint64_t seed) {
  if (count > eligible.size()) {
    throw ShortfallError("need " + std::to_string(count) + " poison candidates but only " +
                         std::to_string(eligible.size()) + " samples are eligible");
  }
  std::vector<std::size_t> pool = eligible;
  Rng rng(derive_seed(seed, 0x9015));
  rng.shuffle(pool);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline std::string poison_entry_id(const std::string& source_id) { return source_id + "~p"; }

// Replaces round(ratio * N) training samples by their triggered versions.
// Poisoned records go to root/prefix/poison/; the mixed manifest is written to
// root/prefix/mixed_manifest.json and returned. Untouched entries keep their
// original files and hashes.
inline DatasetManifest poison_dataset(const std::filesystem::path& root, const DatasetManifest& clean,
                                      const PoisonConfig& config, const std::string& cell, const std::string& prefix) {
  config.validate();
  const auto train = clean.split(kSplitTrain);
  std::vector<std::size_t> eligible;
  std::vector<SampleRecord> records;
  records.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto bytes = io::read_file(root / train[i]->file);
    if (io::sha256_hex(bytes) != train[i]->sha256) {
      throw CorruptionError((root / train[i]->file).string() + ": content hash does not match manifest");
    }
    records.push_back(decode_sample(bytes, train[i]->file));
    if (trigger_eligible(records.back().sample, config.trigger.kind)) eligible.push_back(i);
  }
  const auto chosen = select_poison_indices(eligible, poison_count(config.ratio, train.size()), config.seed);

  DatasetManifest mixed = clean;
  PoisonBookkeeping book;
  book.cell = cell;
  book.trigger_kind = trigger_name(config.trigger.kind);
  book.ratio = config.ratio;
  book.seed = config.seed;
  book.eligible = eligible.size();
  std::map<std::string, ManifestEntry> replacements;
  for (std::size_t i : chosen) {
    const auto& src = *train[i];
    const auto rec = apply_trigger(records[i].sample, config.trigger);
    const auto bytes = encode_sample(rec);
    ManifestEntry e = src;
    e.id = poison_entry_id(src.id);
    e.source_id = src.id;
    e.poisoned = true;
    e.file = prefix + "poison/" + src.id + ".bin";
    e.sha256 = io::sha256_hex(bytes);
    io::write_file_atomic(root / e.file, bytes);
    book.poisoned_ids.push_back(e.id);
    replacements.emplace(src.id, std::move(e));
  }
  for (auto& e : mixed.samples) {
    auto it = replacements.find(e.id);
    if (it != replacements.end()) e = it->second;
  }
  mixed.poison = std::move(book);
  mixed.save(root / prefix / "mixed_manifest.json");
  return mixed;
}

// Triggered evaluation set: every trigger_test scene passed through the
// cell's operator.
inline std::vector<SampleRecord> build_triggered_set(const std::vector<SampleRecord>& scenes,
                                                     const TriggerSpec& spec) {
  std::vector<SampleRecord> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) {
    if (!trigger_eligible(s.sample, spec.kind)) {
      throw ShortfallError("trigger test sample " + std::to_string(s.sample.sample_id) + " has no wall region");
    }
    out.push_back(apply_trigger(s.sample, spec));
  }
  return out;
}

}  // namespace gla
