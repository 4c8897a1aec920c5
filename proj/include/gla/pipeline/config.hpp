#pragma once

#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gla/eval/attack.hpp"
#include "gla/io.hpp"
#include "gla/model/config.hpp"
#include "gla/train/poison.hpp"
#include "gla/train/trainer.hpp"

namespace gla {

// One experiment cell: a trigger kind at a poison ratio, or the clean
// control (kind "clean", ratio 0).
struct CellSpec {
  std::string kind;  // "clean" or a trigger kind name
  double ratio = 0.0;

  bool is_control() const { return kind == "clean"; }

  // Directory-safe name, e.g. composite_0.100
  std::string name() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%.3f", kind.c_str(), ratio);
    return buf;
  }

  bool operator==(const CellSpec&) const = default;
};

inline CellSpec parse_cell(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ValidationError("cell '" + text + "' must look like kind:ratio");
  CellSpec c;
  c.kind = text.substr(0, colon);
  const auto ratio_text = text.substr(colon + 1);
  std::size_t used = 0;
  try {
    c.ratio = std::stod(ratio_text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != ratio_text.size()) throw ValidationError("cell '" + text + "' has a malformed ratio");
  if (!(c.ratio >= 0.0 && c.ratio <= 1.0)) throw ValidationError("cell '" + text + "' ratio must lie in [0, 1]");
  if (c.is_control()) {
    if (c.ratio != 0.0) throw ValidationError("the clean control cell must have ratio 0");
  } else {
    parse_trigger_kind(c.kind);
  }
  return c;
}

inline std::string cell_text(const CellSpec& c) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s:%g", c.kind.c_str(), c.ratio);
  return buf;
}

struct DatasetConfig {
  std::size_t n_train = 2000;
  std::size_t n_clean_test = 200;
  std::size_t n_trigger_test = 40;
  std::uint64_t seed = 42;
};

struct MetricConfig {
  MatchRule rule = MatchRule::prefix;
  std::size_t diag_samples = 40;  // clean samples behind reg_gap and separability
  std::size_t kl_questions = 500;
};

struct ExperimentConfig {
  std::filesystem::path output_dir = "runs/default";
  DatasetConfig dataset;
  VLMConfig model;
  PretrainConfig pretrain;
  TrainConfig train;
  PoisonConfig poison;  // ratio and kind are overridden per cell
  std::vector<CellSpec> cells;
  MetricConfig metrics;

  // Trigger spec of a cell; the control is evaluated against the composite
  // trigger so its ASR shows the unpoisoned response.
  TriggerSpec trigger_for(const CellSpec& cell) const {
    TriggerSpec t = poison.trigger;
    t.kind = cell.is_control() ? TriggerKind::composite : parse_trigger_kind(cell.kind);
    return t;
  }

  PoisonConfig poison_for(const CellSpec& cell) const {
    PoisonConfig p = poison;
    p.ratio = cell.ratio;
    p.trigger = trigger_for(cell);
    return p;
  }

  void validate() const {
    if (dataset.n_train == 0 || dataset.n_clean_test == 0 || dataset.n_trigger_test == 0) {
      throw ValidationError("dataset splits must be nonempty");
    }
    model.validate();
    pretrain.validate();
    train.validate();
    poison.validate();
    if (cells.empty()) throw ValidationError("config lists no cells");
    std::set<std::string> names;
    for (const auto& c : cells) {
      if (!names.insert(c.name()).second) throw ValidationError("duplicate cell " + cell_text(c));
    }
    if (metrics.diag_samples == 0 || metrics.diag_samples > dataset.n_clean_test) {
      throw ValidationError("metrics.diag_samples must lie in [1, n_clean_test]");
    }
    if (metrics.kl_questions == 0 || metrics.kl_questions > dataset.n_train) {
      throw ValidationError("metrics.kl_questions must lie in [1, n_train]");
    }
  }
};

namespace config_detail {

// Walks one JSON object, rejecting keys that no field claims.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(where() + " must be an object");
  }

  // Call after every field has been read.
  void done() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ValidationError("unknown key " + where(key));
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError(where(key) + " has the wrong type");
    }
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return std::optional<Section>(std::in_place, j_.at(key), where(key));
  }

  const nlohmann::json* raw(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::vector<int> parse_tokens(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array()) throw ValidationError(where + " must be a list of words or token ids");
  std::vector<int> out;
  for (const auto& t : j) {
    if (t.is_string()) {
      out.push_back(vocab::require_id(t.get<std::string>()));
    } else if (t.is_number_integer()) {
      out.push_back(t.get<int>());
    } else {
      throw ValidationError(where + " entries must be words or integers");
    }
  }
  return out;
}

}  // namespace config_detail

inline std::vector<CellSpec> default_cells() {
  return {parse_cell("clean:0"),           parse_cell("composite:0.025"),    parse_cell("composite:0.05"),
          parse_cell("composite:0.1"),     parse_cell("graffiti_only:0.1"),  parse_cell("crosslingual_only:0.1"),
          parse_cell("badnets:0.1")};
}

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  using config_detail::Section;
  ExperimentConfig c;
  c.cells = default_cells();
  {
    Section root(j, "");
    std::string out = c.output_dir.string();
    root.get("output_dir", out);
    c.output_dir = out;
    if (auto s = root.child("dataset")) {
      s->get("n_train", c.dataset.n_train);
      s->get("n_clean_test", c.dataset.n_clean_test);
      s->get("n_trigger_test", c.dataset.n_trigger_test);
      s->get("seed", c.dataset.seed);
      s->done();
    }
    if (auto s = root.child("model")) {
      auto& m = c.model;
      s->get("image_size", m.image_size);
      s->get("channels", m.channels);
      s->get("patch", m.patch);
      s->get("hidden", m.hidden);
      s->get("layers", m.layers);
      s->get("heads", m.heads);
      s->get("ffn_hidden", m.ffn_hidden);
      s->get("vocab", m.vocab);
      s->get("max_answer", m.max_answer);
      s->get("max_question", m.max_question);
      s->get("adapter_rank", m.adapter_rank);
      s->get("adapter_alpha", m.adapter_alpha);
      s->get("adapter_init_std", m.adapter_init_std);
      s->get("init_seed", m.init_seed);
      s->done();
    }
    if (auto s = root.child("pretrain")) {
      s->get("lr", c.pretrain.lr);
      s->get("epochs", c.pretrain.epochs);
      s->get("batch", c.pretrain.batch);
      s->get("grad_clip", c.pretrain.grad_clip);
      s->get("seed", c.pretrain.seed);
      s->done();
    }
    if (auto s = root.child("train")) {
      s->get("lr", c.train.lr);
      s->get("weight_decay", c.train.weight_decay);
      s->get("epochs", c.train.epochs);
      s->get("batch", c.train.batch);
      s->get("grad_clip", c.train.grad_clip);
      s->get("adapter_dropout", c.train.adapter_dropout);
      s->get("seed", c.train.seed);
      s->get("grad_pairs", c.train.grad_pairs);
      s->done();
    }
    if (auto s = root.child("poison")) {
      s->get("lambda", c.poison.lambda);
      s->get("seed", c.poison.seed);
      if (auto t = s->child("trigger")) {
        auto& spec = c.poison.trigger;
        t->get("tau_style", spec.tau_style);
        if (const auto* y = t->raw("y_tgt")) spec.y_tgt = config_detail::parse_tokens(*y, t->where("y_tgt"));
        t->get("blended_alpha", spec.blended_alpha);
        t->get("issba_eps", spec.issba_eps);
        t->get("pattern_seed", spec.pattern_seed);
        t->get("badnets_patch", spec.badnets_patch);
        t->done();
      }
      s->done();
    }
    if (const auto* cells = root.raw("cells")) {
      if (!cells->is_array()) throw ValidationError("cells must be a list of kind:ratio strings");
      c.cells.clear();
      for (const auto& e : *cells) {
        if (!e.is_string()) throw ValidationError("cells entries must be strings");
        c.cells.push_back(parse_cell(e.get<std::string>()));
      }
    }
    if (auto s = root.child("metrics")) {
      std::string rule = match_rule_name(c.metrics.rule);
      s->get("match_rule", rule);
      c.metrics.rule = parse_match_rule(rule);
      s->get("diag_samples", c.metrics.diag_samples);
      s->get("kl_questions", c.metrics.kl_questions);
      s->done();
    }
    root.done();
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return parse_experiment_config(j);
}

// Canonical JSON echo of every effective setting (stable key order).
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  const auto& m = c.model;
  const auto& t = c.poison.trigger;
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& cell : c.cells) cells.push_back(cell_text(cell));
  return {
      {"output_dir", c.output_dir.string()},
      {"dataset",
       {{"n_train", c.dataset.n_train},
        {"n_clean_test", c.dataset.n_clean_test},
        {"n_trigger_test", c.dataset.n_trigger_test},
        {"seed", c.dataset.seed}}},
      {"model",
       {{"image_size", m.image_size},       {"channels", m.channels},         {"patch", m.patch},
        {"hidden", m.hidden},               {"layers", m.layers},             {"heads", m.heads},
        {"ffn_hidden", m.ffn_hidden},       {"vocab", m.vocab},               {"max_answer", m.max_answer},
        {"max_question", m.max_question},   {"adapter_rank", m.adapter_rank}, {"adapter_alpha", m.adapter_alpha},
        {"adapter_init_std", m.adapter_init_std}, {"init_seed", m.init_seed}}},
      {"pretrain",
       {{"lr", c.pretrain.lr},
        {"epochs", c.pretrain.epochs},
        {"batch", c.pretrain.batch},
        {"grad_clip", c.pretrain.grad_clip},
        {"seed", c.pretrain.seed}}},
      {"train",
       {{"lr", c.train.lr},
        {"weight_decay", c.train.weight_decay},
        {"epochs", c.train.epochs},
        {"batch", c.train.batch},
        {"grad_clip", c.train.grad_clip},
        {"adapter_dropout", c.train.adapter_dropout},
        {"seed", c.train.seed},
        {"grad_pairs", c.train.grad_pairs}}},
      {"poison",
       {{"lambda", c.poison.lambda},
        {"seed", c.poison.seed},
        {"trigger",
         {{"tau_style", t.tau_style},
          {"y_tgt", t.y_tgt},
          {"blended_alpha", t.blended_alpha},
          {"issba_eps", t.issba_eps},
          {"pattern_seed", t.pattern_seed},
          {"badnets_patch", t.badnets_patch}}}}},
      {"cells", cells},
      {"metrics",
       {{"match_rule", match_rule_name(c.metrics.rule)},
        {"diag_samples", c.metrics.diag_samples},
        {"kl_questions", c.metrics.kl_questions}}},
  };
}

}  // namespace gla
