#pragma once

#include <algorithm>
#include <chrono>
#include <map>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "gla/model/checkpoint.hpp"
#include "gla/pipeline/config.hpp"
#include "gla/pipeline/ledger.hpp"
#include "gla/pipeline/report.hpp"

namespace gla {

enum class Stage { generate, pretrain, poison, train, eval, diagnose, report, all };

inline Stage parse_stage(const std::string& s) {
  static const std::map<std::string, Stage> names = {
      {"generate", Stage::generate}, {"pretrain", Stage::pretrain}, {"poison", Stage::poison},
      {"train", Stage::train},       {"eval", Stage::eval},         {"diagnose", Stage::diagnose},
      {"report", Stage::report},     {"all", Stage::all}};
  auto it = names.find(s);
  if (it == names.end()) throw ValidationError("unknown stage '" + s + "'");
  return it->second;
}

// Replaces every seed in the config by one derived from a single override.
inline void apply_seed_override(ExperimentConfig& c, std::uint64_t seed) {
  c.dataset.seed = derive_seed(seed, 1);
  c.model.init_seed = derive_seed(seed, 2);
  c.pretrain.seed = derive_seed(seed, 3);
  c.train.seed = derive_seed(seed, 4);
  c.poison.seed = derive_seed(seed, 5);
}

struct PipelineOptions {
  bool resume = false;          // skip target stages whose ledger entries verify
  std::vector<CellSpec> cells;  // restrict to these cells; empty = all configured
  std::ostream* log = &std::cerr;
};

// Artifact locations, relative to the output root.
namespace paths {
inline const std::string kManifest = "dataset/manifest.json";
inline const std::string kBase = "base/base.ckpt";
inline const std::string kPretrainLog = "base/pretrain_log.jsonl";
inline std::string cell_dir(const CellSpec& c) { return "cells/" + c.name() + "/"; }
inline std::string mixed_manifest(const CellSpec& c) { return cell_dir(c) + "mixed_manifest.json"; }
inline std::string model(const CellSpec& c) { return cell_dir(c) + "model.ckpt"; }
inline std::string epoch_log(const CellSpec& c) { return cell_dir(c) + "epoch_log.jsonl"; }
inline std::string eval_report(const CellSpec& c) { return cell_dir(c) + "eval_report.json"; }
inline std::string diagnostics(const CellSpec& c) { return cell_dir(c) + "diagnostics.json"; }
inline std::string reg_gap_logits(const CellSpec& c) { return cell_dir(c) + "reg_gap_logits.bin"; }
inline const std::string kReport = "report/report.json";
inline const std::string kTablesCsv = "report/tables.csv";
inline const std::string kTablesJson = "report/tables.json";
inline const std::string kUtilityCsv = "report/utility.csv";
inline const std::string kConvergence = "report/convergence.svg";
}  // namespace paths

// Saved teacher-forced logits behind the regularization gap.
inline std::vector<std::uint8_t> encode_trace(const RegularizationTrace& t) {
  io::ByteWriter w;
  w.text("GLAR");
  w.u32(static_cast<std::uint32_t>(t.clean_logits.size()));
  for (std::size_t i = 0; i < t.clean_logits.size(); ++i) {
    for (const Tensor* x : {&t.clean_logits[i], &t.triggered_logits[i]}) {
      w.u32(static_cast<std::uint32_t>(x->rows()));
      w.u32(static_cast<std::uint32_t>(x->cols()));
      w.f64s(x->values());
    }
  }
  return w.take();
}

inline RegularizationTrace decode_trace(std::span<const std::uint8_t> data, const std::string& context) {
  io::ByteReader r(data, context);
  auto magic = r.bytes(4);
  if (std::string(magic.begin(), magic.end()) != "GLAR") r.fail("magic");
  RegularizationTrace t;
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    for (auto* list : {&t.clean_logits, &t.triggered_logits}) {
      const auto rows = r.u32(), cols = r.u32();
      if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096) r.fail("logit shape");
      list->push_back(Tensor({rows, cols}, r.f64s(std::size_t{rows} * cols)));
    }
  }
  r.expect_end();
  return t;
}

class Pipeline {
 public:
  Pipeline(ExperimentConfig config, PipelineOptions options)
      : cfg_(std::move(config)), opts_(std::move(options)), ledger_(cfg_.output_dir) {
    cfg_.validate();
    for (const auto& c : opts_.cells) {
      if (std::find(cfg_.cells.begin(), cfg_.cells.end(), c) == cfg_.cells.end()) {
        throw ValidationError("cell " + cell_text(c) + " is not part of the configuration");
      }
    }
    std::filesystem::create_directories(cfg_.output_dir);
    ledger_.load();
  }

  void run(Stage target) {
    ran_.clear();
    target_ = target;
    switch (target) {
      case Stage::generate: generate(); break;
      case Stage::pretrain: pretrain(); break;
      case Stage::report: report(); break;
      case Stage::all:
        generate();
        pretrain();
        for (const auto& c : selected_cells()) {
          eval(c);
          diagnose(c);
        }
        if (opts_.cells.empty()) report();
        break;
      default:
        for (const auto& c : selected_cells()) {
          if (target == Stage::poison) poison(c);
          if (target == Stage::train) train(c);
          if (target == Stage::eval) eval(c);
          if (target == Stage::diagnose) diagnose(c);
        }
    }
  }

  const std::set<std::string>& executed() const { return ran_; }
  const RunLedger& ledger() const { return ledger_; }
  const ExperimentConfig& config() const { return cfg_; }

 private:
  using Outputs = std::vector<std::string>;

  std::vector<CellSpec> selected_cells() const { return opts_.cells.empty() ? cfg_.cells : opts_.cells; }

  std::filesystem::path at(const std::string& rel) const { return cfg_.output_dir / rel; }

  void say(const std::string& msg) const {
    if (opts_.log) *opts_.log << "[gla] " << msg << std::endl;
  }

  static std::string outputs_digest(const StageRecord& r) {
    std::string all;
    for (const auto& [p, h] : r.outputs) all += p + "=" + h + "\n";
    return io::sha256_hex(all);
  }

  bool forced(Stage s) const { return !opts_.resume && (target_ == Stage::all || target_ == s); }

  // Runs a stage unless its ledger entry verifies and nothing it depends on
  // was rebuilt in this invocation.
  void ensure(const std::string& key, Stage kind, const nlohmann::json& fingerprint_source,
              const std::vector<std::string>& deps, const std::function<Outputs()>& body) {
    if (ran_.count(key) || checked_.count(key)) return;
    const std::string fingerprint = io::sha256_hex(fingerprint_source.dump());
    std::map<std::string, std::string> inputs;
    bool dep_rebuilt = false;
    for (const auto& d : deps) {
      const auto* rec = ledger_.find(d);
      if (!rec || rec->status != "complete") throw StageError(key + ": predecessor " + d + " has not completed");
      inputs[d] = outputs_digest(*rec);
      dep_rebuilt = dep_rebuilt || ran_.count(d) > 0;
    }
    const auto* rec = ledger_.find(key);
    const bool current = rec && rec->status == "complete" && rec->fingerprint == fingerprint && rec->inputs == inputs &&
                         !dep_rebuilt && !forced(kind) && ledger_.outputs_verify(*rec);
    if (current) {
      say(key + ": up to date");
      checked_.insert(key);
      return;
    }
    say(key + ": running");
    const auto t0 = std::chrono::steady_clock::now();
    StageRecord out;
    out.fingerprint = fingerprint;
    out.inputs = inputs;
    try {
      for (const auto& rel : body()) out.outputs[rel] = io::sha256_file(at(rel));
    } catch (const std::exception& e) {
      out.status = "failed";
      out.error = e.what();
      out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      ledger_.put(key, out);
      throw StageError(key + ": " + e.what());
    }
    out.status = "complete";
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ledger_.put(key, out);
    ran_.insert(key);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f s", out.seconds);
    say(key + ": done in " + std::string(buf));
  }

  nlohmann::json section(std::initializer_list<const char*> keys) const {
    const auto full = config_to_json(cfg_);
    nlohmann::json j = nlohmann::json::object();
    for (const char* k : keys) j[k] = full.at(k);
    return j;
  }

  nlohmann::json cell_fingerprint(const CellSpec& c, std::initializer_list<const char*> keys) const {
    auto j = section(keys);
    j["cell"] = cell_text(c);
    return j;
  }

  DatasetManifest clean_manifest() const { return DatasetManifest::load(at(paths::kManifest)); }

  // ------------------------------------------------------------ stages

  void generate() {
    ensure("generate", Stage::generate, section({"dataset"}), {}, [&] {
      const auto& d = cfg_.dataset;
      const auto m = build_dataset(cfg_.output_dir, d.n_train, d.n_clean_test, d.n_trigger_test, d.seed, "dataset/");
      Outputs out{paths::kManifest};
      for (const auto& e : m.samples) out.push_back(e.file);
      return out;
    });
  }

  void pretrain() {
    generate();
    ensure("pretrain", Stage::pretrain, section({"dataset", "model", "pretrain"}), {"generate"}, [&] {
      const auto m = clean_manifest();
      const auto train = load_split(cfg_.output_dir, m, kSplitTrain);
      const auto val = load_split(cfg_.output_dir, m, kSplitCleanTest);
      ModelParams params = init_params(cfg_.model);
      std::string log;
      pretrain_base(params, train, val, cfg_.pretrain, [&](const PretrainEpoch& e) {
        const nlohmann::json j = {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}};
        log += j.dump() + "\n";
        say("pretrain epoch " + std::to_string(e.epoch) + " " + j.dump());
      });
      save_checkpoint(at(paths::kBase), params);
      io::write_text_atomic(at(paths::kPretrainLog), log);
      return Outputs{paths::kBase, paths::kPretrainLog};
    });
  }

  static std::string key(const CellSpec& c, const char* stage) { return "cells/" + c.name() + "/" + stage; }

  void poison(const CellSpec& c) {
    generate();
    ensure(key(c, "poison"), Stage::poison, cell_fingerprint(c, {"dataset", "poison"}), {"generate"}, [&] {
      const auto mixed =
          poison_dataset(cfg_.output_dir, clean_manifest(), cfg_.poison_for(c), c.name(), paths::cell_dir(c));
      Outputs out{paths::mixed_manifest(c)};
      for (const auto& e : mixed.samples)
        if (e.poisoned) out.push_back(e.file);
      return out;
    });
  }

  std::vector<SampleRecord> triggered_test(const CellSpec& c) const {
    const auto scenes = load_split(cfg_.output_dir, clean_manifest(), kSplitTriggerTest);
    return build_triggered_set(scenes, cfg_.trigger_for(c));
  }

  void train(const CellSpec& c) {
    pretrain();
    poison(c);
    ensure(key(c, "train"), Stage::train, cell_fingerprint(c, {"dataset", "model", "pretrain", "train", "poison"}),
           {"pretrain", key(c, "poison")}, [&] {
             const auto mixed = DatasetManifest::load(at(paths::mixed_manifest(c)));
             const auto train_set = load_split(cfg_.output_dir, mixed, kSplitTrain);
             const auto clean = load_split(cfg_.output_dir, mixed, kSplitCleanTest);
             const auto triggered = triggered_test(c);
             ModelParams params = load_checkpoint(at(paths::kBase));
             ValidationSets val{&clean, &triggered, cfg_.poison.trigger.y_tgt, cfg_.metrics.rule};
             const auto log = train_adapters(params, train_set, cfg_.train, cfg_.poison_for(c), val,
                                             [&](const EpochRecord& r) {
                                               say(c.name() + " epoch " + std::to_string(r.epoch) + " " +
                                                   r.to_json().dump());
                                             });
             save_checkpoint(at(paths::model(c)), params);
             io::write_text_atomic(at(paths::epoch_log(c)), epoch_log_jsonl(log));
             return Outputs{paths::model(c), paths::epoch_log(c)};
           });
  }

  void eval(const CellSpec& c) {
    train(c);
    ensure(key(c, "eval"), Stage::eval,
           cell_fingerprint(c, {"dataset", "model", "pretrain", "train", "poison", "metrics"}), {key(c, "train")}, [&] {
             const auto params = load_checkpoint(at(paths::model(c)));
             const auto clean = load_split(cfg_.output_dir, clean_manifest(), kSplitCleanTest);
             auto report = evaluate_cell(params, clean, triggered_test(c), cfg_.poison.trigger.y_tgt, cfg_.metrics.rule);
             report.cell = c.name();
             report.trigger_kind = c.kind;
             report.ratio = c.ratio;
             io::write_text_atomic(at(paths::eval_report(c)), report.to_json().dump(1) + "\n");
             return Outputs{paths::eval_report(c)};
           });
  }

  void diagnose(const CellSpec& c) {
    train(c);
    ensure(key(c, "diagnose"), Stage::diagnose,
           cell_fingerprint(c, {"dataset", "model", "pretrain", "train", "poison", "metrics"}), {key(c, "train")}, [&] {
             ModelParams params = load_checkpoint(at(paths::model(c)));
             const auto clean_m = clean_manifest();
             const auto mixed = DatasetManifest::load(at(paths::mixed_manifest(c)));
             DiagnosticsReport d;
             d.cell = c.name();
             {
               const auto train_set = load_split(cfg_.output_dir, mixed, kSplitTrain);
               d.grad = mean_gradient_cosine(params, train_set, cfg_.train.grad_pairs, cfg_.train.batch,
                                             derive_seed(cfg_.train.seed, 0xd1a9));
               std::vector<std::vector<int>> questions;
               for (const auto& r : train_set)
                 if (!r.poisoned) questions.push_back(r.sample.question);
               const std::size_t k = std::min(cfg_.metrics.kl_questions, questions.size() / 2);
               const std::vector<std::vector<int>> first(questions.begin(), questions.begin() + k);
               const std::vector<std::vector<int>> second(questions.begin() + k, questions.begin() + 2 * k);
               d.kl_shift = kl_shift(first);
               d.kl_base_halves = smoothed_token_kl(first, second);
             }
             params.set_trainable(false, false);
             const auto scenes = load_split(cfg_.output_dir, clean_m, kSplitTriggerTest);
             std::vector<SceneSample> clean_scenes;
             for (const auto& s : scenes) clean_scenes.push_back(s.sample);
             const auto cell_trigger = cfg_.trigger_for(c);
             std::vector<TriggerKind> kinds{cell_trigger.kind};
             for (auto k : {TriggerKind::composite, TriggerKind::graffiti_only, TriggerKind::crosslingual_only}) {
               if (std::find(kinds.begin(), kinds.end(), k) == kinds.end()) kinds.push_back(k);
             }
             for (auto k : kinds) {
               TriggerSpec spec = cell_trigger;
               spec.kind = k;
               std::vector<SceneSample> trig;
               for (const auto& s : scenes) trig.push_back(apply_trigger(s.sample, spec).sample);
               d.separability.push_back({trigger_name(k), feature_separability(params, clean_scenes, trig)});
             }
             if (uses_graffiti(cell_trigger.kind)) {
               d.probe = aggregate_probe(params, scenes, build_triggered_set(scenes, cell_trigger));
               d.probe_samples = scenes.size();
             }
             const auto clean = load_split(cfg_.output_dir, clean_m, kSplitCleanTest);
             std::vector<SceneSample> diag_set;
             for (std::size_t i = 0; i < cfg_.metrics.diag_samples; ++i) diag_set.push_back(clean[i].sample);
             const auto trace = regularization_trace(params, diag_set, cell_trigger);
             d.reg_gap_trigger = trigger_name(cell_trigger.kind);
             d.reg_gap = regularization_gap_from_trace(trace);
             d.reg_gap_samples = diag_set.size();
             io::write_file_atomic(at(paths::reg_gap_logits(c)), encode_trace(trace));
             d.reg_gap_replay = regularization_gap_from_trace(
                 decode_trace(io::read_file(at(paths::reg_gap_logits(c))), paths::reg_gap_logits(c)));
             io::write_text_atomic(at(paths::diagnostics(c)), d.to_json().dump(1) + "\n");
             return Outputs{paths::diagnostics(c), paths::reg_gap_logits(c)};
           });
  }

  void report() {
    std::vector<std::string> deps;
    for (const auto& c : cfg_.cells) {
      eval(c);
      diagnose(c);
      deps.push_back(key(c, "train"));
      deps.push_back(key(c, "eval"));
      deps.push_back(key(c, "diagnose"));
    }
    auto echo = config_to_json(cfg_);
    echo.erase("output_dir");
    ensure("report", Stage::report, echo, deps, [&] {
      std::vector<EvalReport> evals;
      std::vector<ConvergenceCurve> curves;
      std::map<std::string, double> best_ratio;
      nlohmann::json cells = nlohmann::json::object();
      for (const auto& c : cfg_.cells) {
        auto ej = nlohmann::json::parse(io::read_text(at(paths::eval_report(c))));
        evals.push_back(EvalReport::from_json(ej));
        const auto dj = nlohmann::json::parse(io::read_text(at(paths::diagnostics(c))));
        const auto log = parse_epoch_log(io::read_text(at(paths::epoch_log(c))));
        nlohmann::json epochs = nlohmann::json::array();
        for (const auto& r : log) epochs.push_back(r.to_json());
        ej.erase("clean_generations");
        ej.erase("triggered_generations");
        cells[c.name()] = {{"eval", ej}, {"diagnostics", dj}, {"epochs", epochs}};
        if (c.is_control()) continue;
        auto it = best_ratio.find(c.kind);
        if (it != best_ratio.end() && it->second >= c.ratio) continue;
        best_ratio[c.kind] = c.ratio;
        ConvergenceCurve curve{c.kind, {}};
        for (const auto& r : log) curve.asr.push_back(r.asr.value_or(0.0));
        auto pos = std::find_if(curves.begin(), curves.end(), [&](const auto& x) { return x.label == c.kind; });
        if (pos != curves.end()) {
          *pos = curve;
        } else {
          curves.push_back(curve);
        }
      }
      for (auto& curve : curves) {
        char buf[32];
        std::snprintf(buf, sizeof buf, " @ %g%%", best_ratio[curve.label] * 100.0);
        curve.label += buf;
      }
      const auto rows = attack_table(evals);
      const nlohmann::json tables = {{"attack", attack_table_json(rows)}, {"columns", table_ratios()}};
      const nlohmann::json report = {
          {"schema_version", kReportSchemaVersion}, {"config", echo}, {"cells", cells}, {"tables", tables}};
      io::write_text_atomic(at(paths::kReport), report.dump(1) + "\n");
      io::write_text_atomic(at(paths::kTablesCsv), attack_table_csv(rows));
      io::write_text_atomic(at(paths::kTablesJson), tables.dump(1) + "\n");
      io::write_text_atomic(at(paths::kUtilityCsv), utility_table_csv(evals));
      io::write_text_atomic(at(paths::kConvergence), convergence_svg(curves));
      return Outputs{paths::kReport, paths::kTablesCsv, paths::kTablesJson, paths::kUtilityCsv, paths::kConvergence};
    });
  }

  ExperimentConfig cfg_;
  PipelineOptions opts_;
  RunLedger ledger_;
  Stage target_ = Stage::all;
  std::set<std::string> ran_;
  std::set<std::string> checked_;
};

}  // namespace gla
