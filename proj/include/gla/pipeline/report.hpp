#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gla/eval/attack.hpp"
#include "gla/eval/diagnostics.hpp"
#include "gla/eval/metrics.hpp"
#include "gla/train/trainer.hpp"
#include "gla/triggers/probe.hpp"

namespace gla {

inline constexpr int kReportSchemaVersion = 1;

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

struct UtilityScores {
  double bleu[4] = {0, 0, 0, 0};  // corpus BLEU-1..4
  double meteor = 0.0;            // METEOR-exact, mean over samples
  double rouge_l = 0.0;           // mean over samples
  double cider = 0.0;             // 0-10

  nlohmann::json to_json() const {
    return {{"bleu1", bleu[0]},   {"bleu2", bleu[1]},     {"bleu3", bleu[2]}, {"bleu4", bleu[3]},
            {"meteor", meteor}, {"rouge_l", rouge_l}, {"cider", cider}};
  }
};

inline UtilityScores utility_scores(const std::vector<std::vector<int>>& cands,
                                    const std::vector<std::vector<int>>& refs) {
  if (cands.empty() || cands.size() != refs.size()) throw ContractError("utility scoring needs paired, nonempty lists");
  UtilityScores u;
  for (std::size_t n = 1; n <= 4; ++n) u.bleu[n - 1] = metrics::corpus_bleu(cands, refs, n);
  std::vector<std::vector<std::vector<int>>> ref_sets;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    u.meteor += metrics::meteor_exact(cands[i], refs[i]);
    u.rouge_l += metrics::rouge_l(cands[i], refs[i]);
    ref_sets.push_back({refs[i]});
  }
  u.meteor /= static_cast<double>(cands.size());
  u.rouge_l /= static_cast<double>(cands.size());
  u.cider = metrics::cider(cands, ref_sets);
  return u;
}

struct EvalReport {
  std::string cell;
  std::string trigger_kind;
  double ratio = 0.0;
  double asr_percent = 0.0;
  double fpr_percent = 0.0;
  MatchRule rule = MatchRule::prefix;
  std::size_t n_triggered = 0;
  std::size_t n_clean = 0;
  UtilityScores utility;
  std::vector<std::vector<int>> clean_generations;
  std::vector<std::vector<int>> triggered_generations;

  nlohmann::json to_json() const {
    return {{"schema_version", kReportSchemaVersion},
            {"cell", cell},
            {"trigger_kind", trigger_kind},
            {"ratio", ratio},
            {"asr_percent", asr_percent},
            {"fpr_percent", fpr_percent},
            {"match_rule", match_rule_name(rule)},
            {"counts", {{"triggered_test", n_triggered}, {"clean_test", n_clean}}},
            {"utility", utility.to_json()},
            {"metric_notes", "BLEU is corpus-level; METEOR-exact uses exact unigram matches only; CIDEr without "
                             "length penalty, smoothed IDF"},
            {"clean_generations", clean_generations},
            {"triggered_generations", triggered_generations}};
  }

  static EvalReport from_json(const nlohmann::json& j) {
    EvalReport r;
    try {
      if (j.at("schema_version").get<int>() != kReportSchemaVersion) throw ValidationError("eval report schema");
      r.cell = j.at("cell").get<std::string>();
      r.trigger_kind = j.at("trigger_kind").get<std::string>();
      r.ratio = j.at("ratio").get<double>();
      r.asr_percent = j.at("asr_percent").get<double>();
      r.fpr_percent = j.at("fpr_percent").get<double>();
      r.rule = parse_match_rule(j.at("match_rule").get<std::string>());
      r.n_triggered = j.at("counts").at("triggered_test").get<std::size_t>();
      r.n_clean = j.at("counts").at("clean_test").get<std::size_t>();
      const auto& u = j.at("utility");
      for (int n = 0; n < 4; ++n) r.utility.bleu[n] = u.at("bleu" + std::to_string(n + 1)).get<double>();
      r.utility.meteor = u.at("meteor").get<double>();
      r.utility.rouge_l = u.at("rouge_l").get<double>();
      r.utility.cider = u.at("cider").get<double>();
      r.clean_generations = j.at("clean_generations").get<std::vector<std::vector<int>>>();
      r.triggered_generations = j.at("triggered_generations").get<std::vector<std::vector<int>>>();
    } catch (const nlohmann::json::exception& e) {
      throw CorruptionError(std::string("malformed eval report: ") + e.what());
    }
    return r;
  }
};

// Greedy generations on both test sets, attack rates and clean utility.
inline EvalReport evaluate_cell(const ModelParams& params, const std::vector<SampleRecord>& clean,
                                const std::vector<SampleRecord>& triggered, std::span<const int> y_tgt,
                                MatchRule rule) {
  EvalReport r;
  r.rule = rule;
  r.n_clean = clean.size();
  r.n_triggered = triggered.size();
  r.clean_generations = generate_all(params, clean, params.config.max_answer);
  r.triggered_generations = generate_all(params, triggered, params.config.max_answer);
  r.asr_percent = target_rate(r.triggered_generations, y_tgt, rule);
  r.fpr_percent = target_rate(r.clean_generations, y_tgt, rule);
  std::vector<std::vector<int>> refs;
  for (const auto& s : clean) refs.push_back(s.sample.answer);
  r.utility = utility_scores(r.clean_generations, refs);
  return r;
}

struct SeparabilityEntry {
  std::string trigger;
  Separability stats;
};

struct DiagnosticsReport {
  std::string cell;
  GradientCosineSummary grad;
  std::vector<SeparabilityEntry> separability;
  double kl_shift = 0.0;
  double kl_base_halves = 0.0;  // KL between two disjoint base corpora of equal size
  std::string reg_gap_trigger;
  double reg_gap = 0.0;
  double reg_gap_replay = 0.0;
  std::size_t reg_gap_samples = 0;
  std::optional<OrthogonalityProbe> probe;  // averaged over triggered pairs
  std::size_t probe_samples = 0;

  nlohmann::json to_json() const {
    nlohmann::json per_pair = nlohmann::json::array();
    for (const auto& c : grad.per_pair) per_pair.push_back(optional_json(c));
    nlohmann::json sep = nlohmann::json::object();
    for (const auto& e : separability) {
      sep[e.trigger] = {{"pairs", e.stats.pairs}, {"gamma_hat", e.stats.gamma_hat}, {"mean", e.stats.mean}};
    }
    nlohmann::json probe_json = nullptr;
    if (probe) {
      probe_json = {{"samples", probe_samples},
                    {"agent_patches", probe->agent_patches},
                    {"mean_abs_cosine", probe->mean_abs_cosine},
                    {"max_abs_cosine", probe->max_abs_cosine},
                    {"mean_displacement_norm", probe->displacement_norm},
                    {"agent_rows_unchanged", probe->agent_rows_unchanged}};
    }
    return {{"schema_version", kReportSchemaVersion},
            {"cell", cell},
            {"grad_cosine", {{"mean", optional_json(grad.mean)}, {"per_pair", per_pair}}},
            {"separability", sep},
            {"kl_shift", kl_shift},
            {"kl_base_halves", kl_base_halves},
            {"reg_gap",
             {{"trigger", reg_gap_trigger},
              {"value", reg_gap},
              {"replay", reg_gap_replay},
              {"samples", reg_gap_samples}}},
            {"orthogonality_probe", probe_json}};
  }
};

// Averages the per-sample probe statistics over paired scenes.
inline std::optional<OrthogonalityProbe> aggregate_probe(const ModelParams& params,
                                                         const std::vector<SampleRecord>& clean,
                                                         const std::vector<SampleRecord>& triggered) {
  if (clean.empty()) return std::nullopt;
  OrthogonalityProbe total;
  std::size_t with_agents = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const auto p = feature_orthogonality_probe(params, clean[i].sample.image, triggered[i].sample.image,
                                               clean[i].sample.agent_boxes);
    total.agent_patches += p.agent_patches;
    total.displacement_norm += p.displacement_norm;
    total.max_abs_cosine = std::max(total.max_abs_cosine, p.max_abs_cosine);
    total.agent_rows_unchanged = total.agent_rows_unchanged && p.agent_rows_unchanged;
    if (p.agent_patches > 0) {
      total.mean_abs_cosine += p.mean_abs_cosine;
      ++with_agents;
    }
  }
  if (with_agents) total.mean_abs_cosine /= static_cast<double>(with_agents);
  total.displacement_norm /= static_cast<double>(clean.size());
  return total;
}

// ---------------------------------------------------------------- tables

// Two decimals, halves rounded toward +infinity.
inline double round_half_up_2(double v) { return std::floor(v * 100.0 + 0.5 + 1e-9) / 100.0; }

inline std::string format_2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", round_half_up_2(v));
  std::string s = buf;
  if (s == "-0.00") s = "0.00";
  return s;
}

inline double arithmetic_mean(const std::vector<double>& v) {
  if (v.empty()) throw ContractError("mean of an empty list");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline const std::vector<double>& table_ratios() {
  static const std::vector<double> r{0.025, 0.05, 0.10};
  return r;
}

struct TableRow {
  std::string trigger;
  std::vector<std::optional<double>> asr, fpr;  // aligned with table_ratios()
  std::optional<double> asr_avg, fpr_avg;
};

inline std::vector<TableRow> attack_table(const std::vector<EvalReport>& reports) {
  std::map<std::string, TableRow> rows;
  std::vector<std::string> order;
  const auto& ratios = table_ratios();
  for (const auto& r : reports) {
    if (r.trigger_kind == "clean") continue;
    std::size_t slot = ratios.size();
    for (std::size_t k = 0; k < ratios.size(); ++k) {
      if (std::abs(ratios[k] - r.ratio) < 1e-9) slot = k;
    }
    if (slot == ratios.size()) continue;
    auto [it, fresh] = rows.try_emplace(r.trigger_kind);
    if (fresh) {
      it->second.trigger = r.trigger_kind;
      it->second.asr.assign(ratios.size(), std::nullopt);
      it->second.fpr.assign(ratios.size(), std::nullopt);
      order.push_back(r.trigger_kind);
    }
    it->second.asr[slot] = r.asr_percent;
    it->second.fpr[slot] = r.fpr_percent;
  }
  std::vector<TableRow> out;
  for (const auto& name : order) {
    auto row = rows.at(name);
    std::vector<double> a, f;
    for (std::size_t k = 0; k < ratios.size(); ++k) {
      if (row.asr[k]) a.push_back(*row.asr[k]);
      if (row.fpr[k]) f.push_back(*row.fpr[k]);
    }
    if (!a.empty()) row.asr_avg = arithmetic_mean(a);
    if (!f.empty()) row.fpr_avg = arithmetic_mean(f);
    out.push_back(std::move(row));
  }
  return out;
}

inline std::string attack_table_csv(const std::vector<TableRow>& rows) {
  auto cell = [](const std::optional<double>& v) { return v ? format_2(*v) : std::string(); };
  std::string out = "trigger,ASR 2.5%,ASR 5%,ASR 10%,ASR Avg,FPR 2.5%,FPR 5%,FPR 10%,FPR Avg\n";
  for (const auto& r : rows) {
    out += r.trigger;
    for (const auto& v : r.asr) out += "," + cell(v);
    out += "," + cell(r.asr_avg);
    for (const auto& v : r.fpr) out += "," + cell(v);
    out += "," + cell(r.fpr_avg) + "\n";
  }
  return out;
}

inline nlohmann::json attack_table_json(const std::vector<TableRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json asr = nlohmann::json::array(), fpr = nlohmann::json::array();
    for (const auto& v : r.asr) asr.push_back(optional_json(v));
    for (const auto& v : r.fpr) fpr.push_back(optional_json(v));
    arr.push_back({{"trigger", r.trigger},
                   {"asr", asr},
                   {"asr_avg", optional_json(r.asr_avg)},
                   {"fpr", fpr},
                   {"fpr_avg", optional_json(r.fpr_avg)}});
  }
  return arr;
}

// Per-cell utility with the signed BLEU-1 change against the clean control.
inline std::string utility_table_csv(const std::vector<EvalReport>& reports) {
  std::optional<double> control;
  for (const auto& r : reports)
    if (r.trigger_kind == "clean") control = r.utility.bleu[0];
  std::string out = "cell,BLEU-1,BLEU-2,BLEU-3,BLEU-4,METEOR,ROUGE-L,CIDEr,BLEU-1 delta\n";
  for (const auto& r : reports) {
    const auto& u = r.utility;
    out += r.cell + "," + format_2(u.bleu[0]) + "," + format_2(u.bleu[1]) + "," + format_2(u.bleu[2]) + "," +
           format_2(u.bleu[3]) + "," + format_2(u.meteor) + "," + format_2(u.rouge_l) + "," + format_2(u.cider) + ",";
    if (control) {
      const double d = u.bleu[0] - *control;
      out += (d >= 0 ? "+" : "") + format_2(d);
    }
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------- convergence plot

struct ConvergenceCurve {
  std::string label;
  std::vector<double> asr;  // one value per epoch
};

inline std::string convergence_svg(const std::vector<ConvergenceCurve>& curves) {
  if (curves.empty()) throw ValidationError("convergence plot needs at least one epoch log");
  std::size_t epochs = 0;
  for (const auto& c : curves) {
    if (c.asr.empty()) throw ValidationError("epoch log for '" + c.label + "' is empty");
    epochs = std::max(epochs, c.asr.size());
  }
  static const char* palette[] = {"#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};
  const double w = 640, h = 400, left = 60, right = 170, top = 30, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  auto px = [&](std::size_t epoch) {
    return epochs <= 1 ? left + pw / 2 : left + pw * static_cast<double>(epoch - 1) / static_cast<double>(epochs - 1);
  };
  auto py = [&](double asr) { return top + ph * (1.0 - std::clamp(asr, 0.0, 100.0) / 100.0); };
  char buf[256];
  std::string s;
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                w, h, w, h);
  s += buf;
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int tick = 0; tick <= 100; tick += 20) {
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#dddddd\"/>"
                  "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"end\">%d</text>\n",
                  left, py(tick), left + pw, py(tick), left - 6, py(tick) + 4, tick);
    s += buf;
  }
  for (std::size_t e = 1; e <= epochs; ++e) {
    std::snprintf(buf, sizeof buf, "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\">%zu</text>\n", px(e),
                  top + ph + 16, e);
    s += buf;
  }
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\"/>"
                "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\"/>\n",
                left, top, left, top + ph, left, top + ph, left + pw, top + ph);
  s += buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\">epoch</text>\n", left + pw / 2,
                h - 12);
  s += buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"16\" y=\"%.2f\" text-anchor=\"middle\" transform=\"rotate(-90 16 %.2f)\">ASR (%%)</text>\n",
                top + ph / 2, top + ph / 2);
  s += buf;
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const char* color = palette[i % std::size(palette)];
    std::string points;
    for (std::size_t e = 0; e < curves[i].asr.size(); ++e) {
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", e ? " " : "", px(e + 1), py(curves[i].asr[e]));
      points += buf;
    }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + points +
         "\"/>\n";
    for (std::size_t e = 0; e < curves[i].asr.size(); ++e) {
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2.5\" fill=\"%s\"/>\n", px(e + 1),
                    py(curves[i].asr[e]), color);
      s += buf;
    }
    const double ly = top + 14.0 * static_cast<double>(i) + 6;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"%s\" stroke-width=\"2\"/>"
                  "<text x=\"%.2f\" y=\"%.2f\">",
                  left + pw + 12, ly, left + pw + 30, ly, color, left + pw + 36, ly + 4);
    s += buf;
    s += curves[i].label + "</text>\n";
  }
  s += "</g>\n</svg>\n";
  return s;
}

}  // namespace gla
