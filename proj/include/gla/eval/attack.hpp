#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "gla/model/vlm.hpp"
#include "gla/scene/dataset.hpp"

namespace gla {

// How a generation counts as carrying the target: as its exact prefix, or
// anywhere as a contiguous run.
enum class MatchRule { prefix, containment };

inline const char* match_rule_name(MatchRule r) { return r == MatchRule::prefix ? "prefix" : "containment"; }

inline MatchRule parse_match_rule(const std::string& s) {
  if (s == "prefix") return MatchRule::prefix;
  if (s == "containment") return MatchRule::containment;
  throw ValidationError("unknown match rule '" + s + "'");
}

inline bool carries_target(std::span<const int> output, std::span<const int> y_tgt, MatchRule rule) {
  if (y_tgt.empty()) throw ContractError("empty target prefix");
  if (output.size() < y_tgt.size()) return false;
  if (rule == MatchRule::prefix) return std::equal(y_tgt.begin(), y_tgt.end(), output.begin());
  return std::search(output.begin(), output.end(), y_tgt.begin(), y_tgt.end()) != output.end();
}

// Percentage of generations carrying the target.
inline double target_rate(const std::vector<std::vector<int>>& outputs, std::span<const int> y_tgt, MatchRule rule) {
  if (outputs.empty()) throw ContractError("rate over an empty evaluation set");
  std::size_t hits = 0;
  for (const auto& o : outputs) hits += carries_target(o, y_tgt, rule) ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(outputs.size());
}

// Greedy generations; under the prefix rule decoding stops after |y_tgt|
// tokens since later tokens cannot change the decision.
inline std::vector<std::vector<int>> generate_all(const ModelParams& params, const std::vector<SampleRecord>& set,
                                                  std::size_t max_tokens) {
  std::vector<std::vector<int>> out;
  out.reserve(set.size());
  for (const auto& r : set) out.push_back(generate_answer(params, r.sample.image, r.sample.question, max_tokens));
  return out;
}

inline std::size_t decision_length(std::span<const int> y_tgt, MatchRule rule, std::size_t max_answer) {
  return rule == MatchRule::prefix ? y_tgt.size() : max_answer;
}

inline double attack_success_rate(const ModelParams& params, const std::vector<SampleRecord>& triggered,
                                  std::span<const int> y_tgt, MatchRule rule = MatchRule::prefix) {
  if (triggered.empty()) throw ContractError("attack success rate over an empty triggered set");
  return target_rate(generate_all(params, triggered, decision_length(y_tgt, rule, params.config.max_answer)), y_tgt,
                     rule);
}

inline double false_positive_rate(const ModelParams& params, const std::vector<SampleRecord>& clean,
                                  std::span<const int> y_tgt, MatchRule rule = MatchRule::prefix) {
  if (clean.empty()) throw ContractError("false positive rate over an empty clean set");
  return target_rate(generate_all(params, clean, decision_length(y_tgt, rule, params.config.max_answer)), y_tgt, rule);
}

}  // namespace gla
