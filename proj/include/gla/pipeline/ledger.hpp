#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <json.hpp>

#include "gla/io.hpp"

namespace gla {

struct StageRecord {
  std::string status;  // "complete" or "failed"
  std::string fingerprint;  // hash of the config slice the stage depends on
  std::map<std::string, std::string> inputs;   // artifact path -> sha256 consumed
  std::map<std::string, std::string> outputs;  // artifact path -> sha256 produced
  double seconds = 0.0;
  std::string error;
};

// Stage completion markers and artifact hashes, persisted as JSON with
// atomic replacement after every change.
class RunLedger {
 public:
  explicit RunLedger(std::filesystem::path root) : root_(std::move(root)) {}

  std::filesystem::path path() const { return root_ / "ledger.json"; }
  const std::filesystem::path& root() const { return root_; }

  void load() {
    stages_.clear();
    if (!std::filesystem::exists(path())) return;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(io::read_text(path()));
      if (j.at("schema_version").get<int>() != 1) throw CorruptionError(path().string() + ": unsupported schema");
      for (const auto& [key, s] : j.at("stages").items()) {
        StageRecord r;
        r.status = s.at("status").get<std::string>();
        r.fingerprint = s.at("fingerprint").get<std::string>();
        r.inputs = s.at("inputs").get<std::map<std::string, std::string>>();
        r.outputs = s.at("outputs").get<std::map<std::string, std::string>>();
        r.seconds = s.at("seconds").get<double>();
        r.error = s.at("error").get<std::string>();
        stages_[key] = std::move(r);
      }
    } catch (const nlohmann::json::exception& e) {
      throw CorruptionError(path().string() + ": " + e.what());
    }
  }

  void save() const {
    nlohmann::json stages = nlohmann::json::object();
    for (const auto& [key, r] : stages_) {
      stages[key] = {{"status", r.status}, {"fingerprint", r.fingerprint}, {"inputs", r.inputs},
                     {"outputs", r.outputs}, {"seconds", r.seconds},        {"error", r.error}};
    }
    io::write_text_atomic(path(), nlohmann::json{{"schema_version", 1}, {"stages", stages}}.dump(1) + "\n");
  }

  const StageRecord* find(const std::string& key) const {
    auto it = stages_.find(key);
    return it == stages_.end() ? nullptr : &it->second;
  }

  // Merges with whatever other processes wrote since load(), under an
  // advisory lock, so cells run in parallel processes do not drop entries.
  void put(const std::string& key, StageRecord r) {
    std::filesystem::create_directories(root_);
    const auto lock_path = (root_ / "ledger.lock").string();
    const int fd = ::open(lock_path.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd < 0) throw IoError("cannot open " + lock_path);
    ::flock(fd, LOCK_EX);
    try {
      auto mine = std::move(stages_);
      load();
      for (auto& [k, v] : mine) stages_.try_emplace(k, std::move(v));
      stages_[key] = std::move(r);
      save();
    } catch (...) {
      ::flock(fd, LOCK_UN);
      ::close(fd);
      throw;
    }
    ::flock(fd, LOCK_UN);
    ::close(fd);
  }

  void clear() { stages_.clear(); }

  // Every recorded output still exists with its recorded hash.
  bool outputs_verify(const StageRecord& r) const {
    for (const auto& [rel, sha] : r.outputs) {
      const auto p = root_ / rel;
      if (!std::filesystem::exists(p) || io::sha256_file(p) != sha) return false;
    }
    return true;
  }

  const std::map<std::string, StageRecord>& stages() const { return stages_; }

 private:
  std::filesystem::path root_;
  std::map<std::string, StageRecord> stages_;
};

}  // namespace gla
