// End-to-end acceptance run: exact oracles first, then two full default
// pipeline runs whose artifacts back the trend and determinism checks.
// Prints one PASS/FAIL line per criterion; exit status 1 if any fails.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "gla/model/checkpoint.hpp"
#include "gla/pipeline/runner.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace gla;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ------------------------------------------------------------ exact checks

Verdict gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_op;
  std::size_t instances = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (auto& c : testing::operation_cases(seed)) {
      const std::string name = c.name;
      const auto r = testing::check_gradients(std::move(c), seed * 7919);
      ++instances;
      if (r.max_rel_error >= worst) {
        worst = r.max_rel_error;
        worst_op = name;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0,
          fmt("%zu op instances, max rel err %.3g (%s), %.1f s", instances, worst, worst_op.c_str(), secs)};
}

ModelParams without_adapters(ModelParams p) {
  p.vis_adapters.clear();
  p.txt_adapters.clear();
  p.dec_adapters.clear();
  return p;
}

// Zero-B adapters leave every logit bitwise equal to the adapter-free model.
bool zero_adapter_identity(ModelParams p, std::size_t scenes) {
  p.visit_adapters([](const std::string& name, Tensor& t) {
    if (name.back() == 'B')
      for (auto& v : t.mutable_values()) v = 0.0;
  });
  const ModelParams base = without_adapters(p);
  for (std::uint64_t i = 0; i < scenes; ++i) {
    const auto s = generate_scene(9000 + i, i);
    const auto ans = with_eos(s.answer);
    if (!model_forward(p, s.image, s.question, ans).bitwise_equal(model_forward(base, s.image, s.question, ans)))
      return false;
  }
  return true;
}

Verdict locality() {
  std::size_t bad_outside = 0, unchanged_inside = 0;
  for (std::uint64_t i = 0; i < 200; ++i) {
    const auto s = generate_scene(sample_seed(77, kSplitTrain, i), i);
    const auto m = propose_null_mask(s, derive_seed(i, 1));
    const auto out = graffiti_composite(s.image, m, derive_seed(i, 2));
    std::size_t inside = 0;
    for (std::size_t y = 0; y < kSceneSide; ++y)
      for (std::size_t x = 0; x < kSceneSide; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          const bool differs = out.at(y, x, c) != s.image.at(y, x, c);
          if (m.at(y, x)) inside += differs;
          else bad_outside += differs;
        }
    unchanged_inside += inside == 0;
  }
  return {bad_outside == 0 && unchanged_inside == 0,
          fmt("200 triples, %zu pixels changed outside M, %zu masks with no change inside", bad_outside,
              unchanged_inside)};
}

Verdict psi_round_trip() {
  std::vector<int> all(kBaseVocab);
  for (int t = 0; t < kBaseVocab; ++t) all[static_cast<std::size_t>(t)] = t;
  const auto img = psi_sparse(all);
  bool ok = psi_inverse(img) == all && std::set<int>(img.begin(), img.end()).size() == all.size();
  Rng rng(11);
  for (int i = 0; i < 2000 && ok; ++i) {
    std::vector<int> seq(static_cast<std::size_t>(rng.uniform_int(0, 24)));
    for (auto& t : seq) t = static_cast<int>(rng.uniform_int(0, kBaseVocab - 1));
    ok = psi_inverse(psi_sparse(seq)) == seq;
  }
  return {ok, "all base tokens and 2000 random sequences"};
}

Verdict metric_oracles() {
  using namespace metrics;
  std::size_t failures = 0;
  Rng rng(17);
  for (int k = 0; k < 100; ++k) {
    const auto a = testing::random_tokens(rng, 8, 4), b = testing::random_tokens(rng, 8, 4);
    failures += lcs_length(a, b) != testing::brute_lcs(a, b);
  }
  double bleu_err = 0.0;
  for (const auto& c : testing::bleu_cases())
    for (std::size_t n = 1; n <= 4; ++n)
      bleu_err = std::max(bleu_err, std::abs(bleu_n(testing::words(c.cand), testing::words(c.ref), n) - c.expect[n - 1]));
  double cider_err = 0.0;
  for (int k = 0; k < 20; ++k) {
    std::vector<std::vector<Tokens>> refs;
    std::vector<Tokens> cands;
    for (int d = 0; d < 4; ++d) {
      refs.push_back({testing::random_tokens(rng, 7, 5), testing::random_tokens(rng, 7, 5)});
      cands.push_back(testing::random_tokens(rng, 7, 5));
    }
    cider_err = std::max(cider_err, std::abs(cider(cands, refs) - testing::reference_cider(cands, refs)));
  }
  const auto s = testing::words("a b c d e f");
  const bool identity = std::abs(bleu_n(s, s, 4) - 100.0) < 1e-9 && std::abs(rouge_l(s, s) - 100.0) < 1e-9 &&
                        std::abs(cider({s}, {{s}}) - 10.0) < 1e-9;
  return {failures == 0 && bleu_err < 1e-9 && cider_err < 1e-9 && identity,
          fmt("LCS mismatches %zu/100, BLEU max err %.2g, CIDEr max err %.2g, identity %s", failures, bleu_err,
              cider_err, identity ? "ok" : "wrong")};
}

// ------------------------------------------------------------ pipeline artifacts

struct Run {
  fs::path dir;
  ExperimentConfig cfg;
  double seconds = 0.0;
};

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(io::read_text(p)); }

const CellSpec& cell(const ExperimentConfig& cfg, const std::string& text) {
  const auto want = parse_cell(text);
  for (const auto& c : cfg.cells)
    if (c == want) return c;
  throw ContractError("acceptance needs cell " + text + " in the default configuration");
}

nlohmann::json eval_of(const Run& r, const std::string& text) {
  return read_json(r.dir / paths::eval_report(cell(r.cfg, text)));
}

std::vector<EpochRecord> epochs_of(const Run& r, const std::string& text) {
  return parse_epoch_log(io::read_text(r.dir / paths::epoch_log(cell(r.cfg, text))));
}

double stage_seconds(const RunLedger& l, const std::string& key) {
  const auto* rec = l.find(key);
  if (!rec || rec->status != "complete") throw ContractError("ledger lacks a complete " + key);
  return rec->seconds;
}

Verdict subspace_isolation(const Run& r) {
  const auto base = load_checkpoint(r.dir / paths::kBase);
  const auto want = base_weights_sha256(base);
  std::size_t moved = 0, trained_adapters = 0;
  for (const auto& c : r.cfg.cells) {
    const auto m = load_checkpoint(r.dir / paths::model(c));
    moved += base_weights_sha256(m) != want;
    bool any_nonzero = false;
    m.visit_adapters([&](const std::string& name, const Tensor& t) {
      if (name.back() == 'B')
        for (double v : t.values()) any_nonzero = any_nonzero || v != 0.0;
    });
    trained_adapters += any_nonzero;
  }
  const bool fresh = zero_adapter_identity(init_params(r.cfg.model), 10);
  const bool trained = zero_adapter_identity(load_checkpoint(r.dir / paths::model(cell(r.cfg, "composite:0.1"))), 10);
  return {fresh && trained && moved == 0,
          fmt("B=0 identity fresh %s / trained %s; base hash changed in %zu of %zu cells (%zu with trained B)",
              fresh ? "ok" : "broken", trained ? "ok" : "broken", moved, r.cfg.cells.size(), trained_adapters)};
}

Verdict psi_divergence(const Run& r) {
  const auto m = DatasetManifest::load(r.dir / paths::kManifest);
  const auto train = load_split(r.dir, m, kSplitTrain);
  if (train.size() < 1000) throw ContractError("KL check needs 1000 training questions");
  std::vector<std::vector<int>> a, b, shifted;
  for (std::size_t i = 0; i < 1000; ++i) (i < 500 ? a : b).push_back(train[i].sample.question);
  for (const auto& q : a) shifted.push_back(psi_sparse(q));
  const double kl = smoothed_token_kl(a, shifted), halves = smoothed_token_kl(a, b);
  return {kl > 5.0 && kl > halves, fmt("KL(base || Psi) %.4f nats, KL between disjoint halves %.4f", kl, halves)};
}

Verdict end_to_end(const Run& r) {
  const auto hi = eval_of(r, "composite:0.1"), lo = eval_of(r, "composite:0.025");
  const double asr = hi.at("asr_percent"), fpr = hi.at("fpr_percent"), asr_lo = lo.at("asr_percent");
  RunLedger l(r.dir);
  l.load();
  const double shared = stage_seconds(l, "generate") + stage_seconds(l, "pretrain");
  double worst = 0.0;
  std::string worst_cell;
  for (const auto& c : r.cfg.cells) {
    double s = shared;
    for (const char* st : {"poison", "train", "eval", "diagnose"})
      s += stage_seconds(l, "cells/" + c.name() + "/" + st);
    if (s > worst) {
      worst = s;
      worst_cell = c.name();
    }
  }
  const auto& d = r.cfg.dataset;
  const bool sizes = d.n_train == 2000 && d.n_clean_test == 200 && d.n_trigger_test == 40;
  return {sizes && asr >= 80.0 && fpr <= 2.5 && asr_lo >= 40.0 && worst <= 20 * 60.0,
          fmt("10%%: ASR %.1f FPR %.2f; 2.5%%: ASR %.1f; slowest cell %s %.1f min incl. shared stages (1 core)", asr,
              fpr, asr_lo, worst_cell.c_str(), worst / 60.0)};
}

Verdict ablation(const Run& r) {
  const auto comp = eval_of(r, "composite:0.1"), graf = eval_of(r, "graffiti_only:0.1"),
             xl = eval_of(r, "crosslingual_only:0.1");
  const double ca = comp.at("asr_percent"), ga = graf.at("asr_percent");
  const double cf = comp.at("fpr_percent"), xf = xl.at("fpr_percent");
  return {ca >= ga + 10.0 && cf <= xf + 0.5,
          fmt("ASR composite %.1f vs graffiti-only %.1f; FPR composite %.2f vs crosslingual-only %.2f", ca, ga, cf,
              xf)};
}

Verdict utility(const Run& r) {
  const double control = eval_of(r, "clean:0").at("utility").at("bleu1");
  bool ok = true;
  std::ostringstream os;
  os << fmt("control BLEU-1 %.2f; delta", control);
  for (const auto& c : r.cfg.cells) {
    if (c.is_control()) continue;
    const double b = eval_of(r, cell_text(c)).at("utility").at("bleu1");
    if (c.kind == "composite") ok = ok && b >= control - 5.0;
    os << fmt(" %s %+.2f", c.name().c_str(), b - control);
  }
  return {ok, os.str()};
}

Verdict convergence(const Run& r) {
  const auto comp = epochs_of(r, "composite:0.1"), bn = epochs_of(r, "badnets:0.1");
  if (comp.size() < 5 || bn.size() < 5) return {false, "epoch logs shorter than 5 epochs"};
  const double c5 = comp[4].asr.value_or(0.0), b5 = bn[4].asr.value_or(0.0);
  std::size_t first90 = 0;
  for (const auto& e : comp)
    if (!first90 && e.asr.value_or(0.0) >= 90.0) first90 = e.epoch;
  return {comp.size() == 15 && c5 >= 80.0 && b5 < c5,
          fmt("epoch-5 ASR composite %.1f vs BadNets %.1f; composite first >= 90%% at epoch %zu of %zu", c5, b5,
              first90, comp.size())};
}

Verdict diagnostics(const Run& r) {
  bool ok = true;
  std::ostringstream os;
  double worst_replay = 0.0;
  for (const auto& c : r.cfg.cells) {
    const auto d = read_json(r.dir / paths::diagnostics(c));
    for (const auto& v : d.at("grad_cosine").at("per_pair"))
      if (!v.is_null()) ok = ok && v.get<double>() >= -1.0 && v.get<double>() <= 1.0;
    worst_replay = std::max(worst_replay, std::abs(d.at("reg_gap").at("value").get<double>() -
                                                   d.at("reg_gap").at("replay").get<double>()));
    if (c.is_control()) continue;
    const double gamma = d.at("separability").at(trigger_name(r.cfg.trigger_for(c).kind)).at("gamma_hat");
    ok = ok && gamma > 0.0;
    const auto& mean = d.at("grad_cosine").at("mean");
    if (c.kind == "composite") {
      const bool defined = !mean.is_null() && d.at("grad_cosine").at("per_pair").size() == 10;
      ok = ok && defined && std::abs(mean.get<double>()) < 0.5;
      os << fmt("%s cos %.3f gamma %.3f; ", c.name().c_str(), defined ? mean.get<double>() : NAN, gamma);
    }
  }
  ok = ok && worst_replay <= 1e-9;
  os << fmt("max replay diff %.2g", worst_replay);
  return {ok, os.str()};
}

Verdict determinism(const Run& a, const Run& b) {
  std::size_t compared = 0, differing = 0;
  std::string first_diff;
  for (const auto& e : fs::recursive_directory_iterator(a.dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a.dir);
    const auto name = rel.filename().string();
    if (name == "ledger.json" || name == "ledger.lock") continue;  // holds wall-clock timings
    ++compared;
    const auto other = b.dir / rel;
    if (!fs::exists(other) || io::read_file(e.path()) != io::read_file(other)) {
      ++differing;
      if (first_diff.empty()) first_diff = rel.string();
    }
  }
  std::size_t in_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b.dir))
    if (e.is_regular_file() && e.path().filename() != "ledger.json" && e.path().filename() != "ledger.lock") ++in_b;
  return {compared > 0 && differing == 0 && in_b == compared,
          fmt("%zu artifacts compared (reports, checkpoints, logs), %zu differ%s%s", compared, differing,
              first_diff.empty() ? "" : ", first: ", first_diff.c_str())};
}

Run full_run(const fs::path& config_path, const fs::path& dir) {
  Run r;
  r.dir = dir;
  r.cfg = load_experiment_config(config_path);
  r.cfg.output_dir = dir;
  fs::remove_all(dir);
  const auto t0 = std::chrono::steady_clock::now();
  Pipeline(r.cfg, PipelineOptions{}).run(Stage::all);
  r.seconds = seconds_since(t0);
  std::cerr << fmt("[acceptance] run %s finished in %.1f min\n", dir.c_str(), r.seconds / 60.0);
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string config = GLA_SOURCE_DIR "/configs/default.json";
  std::string out = "acceptance_runs";
  app.add_option("--config", config, "experiment config for the two full runs")->check(CLI::ExistingFile);
  app.add_option("--out", out, "scratch directory for the runs");
  CLI11_PARSE(app, argc, argv);

  std::map<int, Verdict> verdicts;
  auto check = [&](int id, const std::function<Verdict()>& f) {
    try {
      verdicts[id] = f();
    } catch (const std::exception& e) {
      verdicts[id] = {false, std::string("error: ") + e.what()};
    }
    std::cerr << "[acceptance] criterion " << id << " evaluated\n";
  };

  check(1, gradients);
  check(3, locality);
  check(5, metric_oracles);

  std::optional<Run> a, b;
  std::string run_error;
  try {
    a = full_run(config, fs::path(out) / "a");
    b = full_run(config, fs::path(out) / "b");
  } catch (const std::exception& e) {
    run_error = e.what();
  }
  auto needs = [&](int id, const std::function<Verdict()>& f) {
    if (!a || !b) {
      verdicts[id] = {false, "pipeline run failed: " + run_error};
      return;
    }
    check(id, f);
  };
  needs(2, [&] { return subspace_isolation(*a); });
  needs(4, [&] {
    const auto rt = psi_round_trip();
    const auto kl = psi_divergence(*a);
    return Verdict{rt.pass && kl.pass, rt.detail + "; " + kl.detail};
  });
  needs(6, [&] { return end_to_end(*a); });
  needs(7, [&] { return ablation(*a); });
  needs(8, [&] { return utility(*a); });
  needs(9, [&] { return convergence(*a); });
  needs(10, [&] { return diagnostics(*a); });
  needs(11, [&] { return determinism(*a, *b); });

  bool all = true;
  for (const auto& [id, v] : verdicts) {
    std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << "\n";
    all = all && v.pass;
  }
  std::cout << (all ? "ALL PASS" : "SOME CRITERIA FAILED") << std::endl;
  return all ? 0 : 1;
}
