#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "gla/eval/metrics.hpp"
#include "gla/numerics/rng.hpp"

// Slow, independent reimplementations used to check the metric code.
namespace gla::testing {

using metrics::Alignment;
using metrics::Tokens;

inline Tokens words(const std::string& s) {
  // One id per character keeps hand cases readable.
  Tokens t;
  for (char c : s)
    if (c != ' ') t.push_back(c);
  return t;
}

inline Tokens random_tokens(Rng& rng, std::size_t max_len, int alphabet) {
  Tokens t(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(max_len))));
  for (auto& x : t) x = static_cast<int>(rng.uniform_int(0, alphabet - 1));
  return t;
}

// Longest common subsequence by enumerating every subsequence of a.
inline std::size_t brute_lcs(const Tokens& a, const Tokens& b) {
  std::size_t best = 0;
  for (std::uint32_t mask = 0; mask < (1u << a.size()); ++mask) {
    std::size_t j = 0, len = 0;
    bool ok = true;
    for (std::size_t i = 0; i < a.size() && ok; ++i) {
      if (!((mask >> i) & 1u)) continue;
      while (j < b.size() && b[j] != a[i]) ++j;
      if (j == b.size()) ok = false;
      else {
        ++j;
        ++len;
      }
    }
    if (ok) best = std::max(best, len);
  }
  return best;
}

// Every partial injective matching of candidate to reference positions;
// best = most matches, then fewest chunks.
inline void enumerate_alignments(const Tokens& c, const Tokens& r, std::size_t i, std::vector<int>& map,
                          std::vector<bool>& used, Alignment& best) {
  if (i == c.size()) {
    std::size_t m = 0, chunks = 0;
    int prev = -2;
    bool prev_matched = false;
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (map[k] < 0) {
        prev_matched = false;
        continue;
      }
      ++m;
      if (!(prev_matched && map[k] == prev + 1)) ++chunks;
      prev = map[k];
      prev_matched = true;
    }
    if (m > best.matches || (m == best.matches && chunks < best.chunks)) best = {m, chunks};
    return;
  }
  map[i] = -1;
  enumerate_alignments(c, r, i + 1, map, used, best);
  for (std::size_t j = 0; j < r.size(); ++j) {
    if (used[j] || r[j] != c[i]) continue;
    used[j] = true;
    map[i] = static_cast<int>(j);
    enumerate_alignments(c, r, i + 1, map, used, best);
    used[j] = false;
  }
  map[i] = -1;
}

inline Alignment brute_alignment(const Tokens& c, const Tokens& r) {
  std::vector<int> map(c.size(), -1);
  std::vector<bool> used(r.size(), false);
  Alignment best{0, 0};
  enumerate_alignments(c, r, 0, map, used, best);
  return best;
}

// Independent TF-IDF CIDEr over string-keyed n-grams.
inline double reference_cider(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& refs) {
  auto grams = [](const Tokens& s, std::size_t n) {
    std::map<std::string, double> g;
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
      std::string key;
      for (std::size_t k = 0; k < n; ++k) key += std::to_string(s[i + k]) + ",";
      g[key] += 1.0;
    }
    return g;
  };
  const double N = static_cast<double>(refs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    double sum = 0.0;
    int orders = 0;
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::string, double> df;
      for (const auto& set : refs) {
        std::set<std::string> present;
        for (const auto& r : set)
          for (const auto& [k, v] : grams(r, n)) present.insert(k);
        for (const auto& k : present) df[k] += 1.0;
      }
      auto weigh = [&](std::map<std::string, double> g) {
        for (auto& [k, v] : g) v *= std::log((1.0 + N) / (1.0 + df[k])) + 1.0;
        return g;
      };
      const auto vc = weigh(grams(cands[i], n));
      double acc = 0.0;
      int counted = 0;
      for (const auto& r : refs[i]) {
        const auto vr = weigh(grams(r, n));
        if (vc.empty() && vr.empty()) continue;
        ++counted;
        double dot = 0, a = 0, b = 0;
        for (const auto& [k, v] : vc) {
          a += v * v;
          if (vr.count(k)) dot += v * vr.at(k);
        }
        for (const auto& [k, v] : vr) b += v * v;
        if (a > 0 && b > 0) acc += 10.0 * dot / std::sqrt(a * b);
      }
      if (counted == 0) continue;
      sum += acc / counted;
      ++orders;
    }
    total += orders ? sum / orders : 0.0;
  }
  return total / static_cast<double>(cands.size());
}


struct BleuCase {
  const char* cand;
  const char* ref;
  double expect[4];  // BLEU-1..4, derived by hand
};

// Characters stand for tokens.
inline std::vector<BleuCase> bleu_cases() {
  const double bp2 = std::exp(1.0 - 2.0);
  return {
      {"a b c d", "a b c e", {75.0, 100.0 * std::sqrt(0.5), 100.0 * std::cbrt(0.25), 0.0}},
      {"a b c d", "a b c d", {100.0, 100.0, 100.0, 100.0}},
      {"a b", "a b c d", {100.0 * bp2, 100.0 * bp2, 0.0, 0.0}},
      {"a a a a", "a b c d", {25.0, 0.0, 0.0, 0.0}},
      {"a b c d e", "a b c d f", {80.0, 100.0 * std::sqrt(0.6), 100.0 * std::cbrt(0.4), 100.0 * std::pow(0.2, 0.25)}},
  };
}

}  // namespace gla::testing
