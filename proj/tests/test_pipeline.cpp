#include <gtest/gtest.h>

#include <filesystem>

#include "gla/pipeline/runner.hpp"

using namespace gla;
namespace fs = std::filesystem;

namespace {

nlohmann::json tiny_json(const fs::path& out) {
  auto j = nlohmann::json::parse(R"({
    "dataset": {"n_train": 40, "n_clean_test": 6, "n_trigger_test": 4, "seed": 3},
    "model": {"hidden": 16, "layers": 1, "heads": 2, "ffn_hidden": 32},
    "pretrain": {"epochs": 1},
    "train": {"epochs": 1, "grad_pairs": 1},
    "metrics": {"diag_samples": 2, "kl_questions": 10},
    "cells": ["clean:0", "composite:0.1"]
  })");
  j["output_dir"] = out.string();
  return j;
}

fs::path fresh_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("gla_pipe_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

EvalReport cell_report(const std::string& kind, double ratio, double asr, double fpr) {
  EvalReport r;
  r.cell = CellSpec{kind, ratio}.name();
  r.trigger_kind = kind;
  r.ratio = ratio;
  r.asr_percent = asr;
  r.fpr_percent = fpr;
  return r;
}

}  // namespace

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_NO_THROW(parse_experiment_config(nlohmann::json::object()));
  EXPECT_THROW(parse_experiment_config({{"bogus", 1}}), ValidationError);
  EXPECT_THROW(parse_experiment_config({{"train", {{"lr", 1e-3}, {"momentum", 0.9}}}}), ValidationError);
  EXPECT_THROW(parse_experiment_config({{"train", {{"lr", "fast"}}}}), ValidationError);
  EXPECT_THROW(parse_experiment_config({{"cells", {"composite:2"}}}), ValidationError);
  EXPECT_THROW(parse_experiment_config({{"cells", {"sparkle:0.1"}}}), ValidationError);
  EXPECT_THROW(parse_experiment_config({{"cells", {"clean:0.1"}}}), ValidationError);
  EXPECT_THROW(parse_experiment_config({{"cells", {"badnets:0.1", "badnets:0.1"}}}), ValidationError);
  EXPECT_THROW(load_experiment_config("/nonexistent/config.json"), IoError);
}

TEST(Config, EchoRoundTrips) {
  const auto c = parse_experiment_config(nlohmann::json::object());
  const auto echo = config_to_json(c);
  EXPECT_EQ(config_to_json(parse_experiment_config(echo)), echo);
  EXPECT_EQ(c.cells.size(), 7u);
  EXPECT_DOUBLE_EQ(c.train.lr, 1e-3);
}

TEST(Config, SeedOverrideTouchesEverySeed) {
  auto a = parse_experiment_config(nlohmann::json::object());
  auto b = a;
  apply_seed_override(b, 99);
  EXPECT_NE(a.dataset.seed, b.dataset.seed);
  EXPECT_NE(a.model.init_seed, b.model.init_seed);
  EXPECT_NE(a.pretrain.seed, b.pretrain.seed);
  EXPECT_NE(a.train.seed, b.train.seed);
  EXPECT_NE(a.poison.seed, b.poison.seed);
  apply_seed_override(a, 99);
  EXPECT_EQ(config_to_json(a), config_to_json(b));
}

TEST(Tables, RoundingAndAverages) {
  EXPECT_EQ(format_2(86.666666), "86.67");
  EXPECT_EQ(format_2(0.185), "0.19");
  EXPECT_EQ(format_2(-0.001), "0.00");
  const auto rows = attack_table({cell_report("clean", 0, 0, 0), cell_report("composite", 0.025, 75, 0),
                                  cell_report("composite", 0.05, 85, 0), cell_report("composite", 0.1, 100, 0.56),
                                  cell_report("badnets", 0.1, 40, 1.5)});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].trigger, "composite");
  EXPECT_EQ(format_2(*rows[0].asr_avg), "86.67");
  EXPECT_EQ(format_2(*rows[0].fpr_avg), "0.19");
  // A single ratio averages to itself.
  EXPECT_DOUBLE_EQ(*rows[1].asr_avg, 40.0);
  EXPECT_FALSE(rows[1].asr[0].has_value());
  const auto csv = attack_table_csv(rows);
  EXPECT_NE(csv.find("composite,75.00,85.00,100.00,86.67,0.00,0.00,0.56,0.19"), std::string::npos);
  EXPECT_NE(csv.find("badnets,,,40.00,40.00,,,1.50,1.50"), std::string::npos);
}

TEST(Tables, UtilityDeltaIsSigned) {
  auto control = cell_report("clean", 0, 0, 0);
  control.utility.bleu[0] = 50;
  auto cell = cell_report("composite", 0.1, 100, 0);
  cell.utility.bleu[0] = 49.5;
  const auto csv = utility_table_csv({control, cell});
  EXPECT_NE(csv.find("clean_0.000,50.00"), std::string::npos);
  EXPECT_NE(csv.find(",+0.00\n"), std::string::npos);
  EXPECT_NE(csv.find(",-0.50\n"), std::string::npos);
}

TEST(Plot, SvgShapeAndDeterminism) {
  EXPECT_THROW(convergence_svg({}), ValidationError);
  EXPECT_THROW(convergence_svg({{"empty", {}}}), ValidationError);
  std::vector<ConvergenceCurve> curves{{"composite @ 10%", {}}, {"badnets @ 10%", {}}};
  for (int e = 0; e < 15; ++e) {
    curves[0].asr.push_back(std::min(100.0, e * 12.5));
    curves[1].asr.push_back(e * 1.0);
  }
  const auto svg = convergence_svg(curves);
  EXPECT_EQ(svg, convergence_svg(curves));
  std::size_t circles = 0;
  for (std::size_t p = svg.find("<circle"); p != std::string::npos; p = svg.find("<circle", p + 1)) ++circles;
  EXPECT_EQ(circles, 30u);
  EXPECT_NE(svg.find("composite @ 10%"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(Trace, EncodeDecodeRoundTrip) {
  RegularizationTrace t;
  t.clean_logits.push_back(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  t.triggered_logits.push_back(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 7}));
  const auto bytes = encode_trace(t);
  const auto back = decode_trace(bytes, "mem");
  EXPECT_EQ(regularization_gap_from_trace(back), regularization_gap_from_trace(t));
  EXPECT_EQ(encode_trace(back), bytes);
  std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 1);
  EXPECT_THROW(decode_trace(cut, "cut"), CorruptionError);
}

TEST(Pipeline, UnknownCellFilterRejected) {
  const auto dir = fresh_dir("filter");
  PipelineOptions o;
  o.cells = {parse_cell("badnets:0.05")};
  o.log = nullptr;
  EXPECT_THROW(Pipeline(parse_experiment_config(tiny_json(dir)), o), ValidationError);
  fs::remove_all(dir);
}

TEST(Pipeline, SingleStageRunsOnlyWhatItNeeds) {
  const auto dir = fresh_dir("pred");
  PipelineOptions o;
  o.log = nullptr;
  Pipeline p(parse_experiment_config(tiny_json(dir)), o);
  p.run(Stage::generate);
  EXPECT_EQ(p.executed(), std::set<std::string>{"generate"});
  fs::remove_all(dir);
}

TEST(Pipeline, RunResumeAndSelectiveRerun) {
  const auto dir = fresh_dir("run");
  const auto cfg = parse_experiment_config(tiny_json(dir));
  PipelineOptions o;
  o.log = nullptr;
  {
    Pipeline p(cfg, o);
    p.run(Stage::all);
    EXPECT_TRUE(p.executed().count("report"));
    EXPECT_TRUE(p.executed().count("cells/composite_0.100/diagnose"));
  }
  for (const auto* f : {paths::kReport.c_str(), paths::kTablesCsv.c_str(), paths::kUtilityCsv.c_str(),
                        paths::kConvergence.c_str(), paths::kTablesJson.c_str()}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const auto report_bytes = io::read_text(dir / paths::kReport);
  const auto report = nlohmann::json::parse(report_bytes);
  EXPECT_EQ(report.at("cells").size(), 2u);
  EXPECT_FALSE(report.at("config").contains("output_dir"));

  o.resume = true;
  {
    Pipeline p(cfg, o);
    p.run(Stage::all);
    EXPECT_TRUE(p.executed().empty());
  }

  const CellSpec comp = parse_cell("composite:0.1");
  fs::remove(dir / paths::model(comp));
  {
    Pipeline p(cfg, o);
    p.run(Stage::all);
    const std::set<std::string> expect{"cells/composite_0.100/train", "cells/composite_0.100/eval",
                                       "cells/composite_0.100/diagnose", "report"};
    EXPECT_EQ(p.executed(), expect);
  }
  // Same inputs retrained deterministically: identical report.
  EXPECT_EQ(io::read_text(dir / paths::kReport), report_bytes);

  // A different seed invalidates everything from the dataset on.
  auto reseeded = cfg;
  apply_seed_override(reseeded, 1234);
  {
    Pipeline p(reseeded, o);
    p.run(Stage::generate);
    EXPECT_TRUE(p.executed().count("generate"));
  }
  fs::remove_all(dir);
}

TEST(Pipeline, FailureIsRecordedInLedger) {
  const auto dir = fresh_dir("fail");
  const auto cfg = parse_experiment_config(tiny_json(dir));
  PipelineOptions o;
  o.log = nullptr;
  o.cells = {parse_cell("composite:0.1")};
  Pipeline p(cfg, o);
  p.run(Stage::generate);
  // A plain file where the cell directory belongs makes poisoning fail.
  fs::create_directories(dir / "cells");
  io::write_text_atomic(dir / "cells" / "composite_0.100", "blocker");
  EXPECT_THROW(p.run(Stage::poison), StageError);
  RunLedger ledger(dir);
  ledger.load();
  const auto* rec = ledger.find("cells/composite_0.100/poison");
  ASSERT_NE(rec, nullptr);
  EXPECT_EQ(rec->status, "failed");
  EXPECT_FALSE(rec->error.empty());
  fs::remove_all(dir);
}
