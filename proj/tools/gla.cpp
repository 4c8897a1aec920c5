// Command-line driver for the experiment pipeline.
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "gla/pipeline/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Composite-trigger backdoor experiments on a toy driving VLM"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> cells;
  bool resume = false;
  std::optional<std::uint64_t> seed_override;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"generate", "synthesize the scene dataset"},
      {"pretrain", "fit the base model on clean data"},
      {"poison", "build the mixed training set of each cell"},
      {"train", "fine-tune adapters for each cell"},
      {"eval", "attack success, false positives and utility"},
      {"diagnose", "gradient, separability, shift and regularization diagnostics"},
      {"report", "tables, report JSON and convergence plot"},
      {"all", "every stage for every cell"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--cell", cells, "restrict to a cell, kind:ratio (repeatable)");
    sub->add_flag("--resume", resume, "skip stages whose ledger entries still verify");
    sub->add_option("--seed-override", seed_override, "derive every seed from this value");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage errors share the invalid-configuration exit status.
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    gla::ExperimentConfig cfg =
        config_path.empty() ? gla::parse_experiment_config(nlohmann::json::object())
                            : gla::load_experiment_config(config_path);
    if (const char* root = std::getenv("GLA_OUTPUT_ROOT"); root && *root) cfg.output_dir = root;
    if (seed_override) gla::apply_seed_override(cfg, *seed_override);
    cfg.validate();

    gla::PipelineOptions opts;
    opts.resume = resume;
    for (const auto& c : cells) opts.cells.push_back(gla::parse_cell(c));

    gla::Pipeline pipeline(cfg, opts);
    pipeline.run(gla::parse_stage(app.get_subcommands().front()->get_name()));
  } catch (const gla::ValidationError& e) {
    std::cerr << "gla: invalid configuration: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "gla: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
