#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gla/errors.hpp"

// Text-generation metrics over token-id sequences. Scores follow the usual
// 0-100 scale except CIDEr (0-10).
namespace gla::metrics {

using Tokens = std::vector<int>;
using NGram = std::vector<int>;

inline std::map<NGram, std::size_t> ngram_counts(std::span<const int> seq, std::size_t n) {
  std::map<NGram, std::size_t> counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++counts[NGram(seq.begin() + i, seq.begin() + i + n)];
  return counts;
}

// Clipped n-gram matches of a candidate against one reference.
inline std::size_t clipped_matches(std::span<const int> cand, std::span<const int> ref, std::size_t n) {
  const auto c = ngram_counts(cand, n);
  const auto r = ngram_counts(ref, n);
  std::size_t hits = 0;
  for (const auto& [g, k] : c) {
    auto it = r.find(g);
    if (it != r.end()) hits += std::min(k, it->second);
  }
  return hits;
}

inline double bleu_from_counts(std::span<const std::size_t> matches, std::span<const std::size_t> totals,
                               std::size_t cand_len, std::size_t ref_len) {
  if (cand_len == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t k = 0; k < matches.size(); ++k) {
    if (totals[k] == 0 || matches[k] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matches[k]) / static_cast<double>(totals[k]));
  }
  const double geo = std::exp(log_sum / static_cast<double>(matches.size()));
  const double bp = cand_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len)) : 1.0;
  return 100.0 * bp * geo;
}

// Sentence-level BLEU-n with uniform weights over orders 1..n. An empty
// candidate or any zero precision scores 0.
inline double bleu_n(std::span<const int> cand, std::span<const int> ref, std::size_t n) {
  if (n < 1) throw ValidationError("BLEU order must be at least 1");
  std::vector<std::size_t> matches(n), totals(n);
  for (std::size_t k = 1; k <= n; ++k) {
    matches[k - 1] = clipped_matches(cand, ref, k);
    totals[k - 1] = cand.size() >= k ? cand.size() - k + 1 : 0;
  }
  return bleu_from_counts(matches, totals, cand.size(), ref.size());
}

// Corpus BLEU-n: counts pooled over all pairs before the geometric mean.
inline double corpus_bleu(const std::vector<Tokens>& cands, const std::vector<Tokens>& refs, std::size_t n) {
  if (n < 1) throw ValidationError("BLEU order must be at least 1");
  if (cands.size() != refs.size()) throw ContractError("candidate and reference lists differ in length");
  std::vector<std::size_t> matches(n, 0), totals(n, 0);
  std::size_t c_len = 0, r_len = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    for (std::size_t k = 1; k <= n; ++k) {
      matches[k - 1] += clipped_matches(cands[i], refs[i], k);
      totals[k - 1] += cands[i].size() >= k ? cands[i].size() - k + 1 : 0;
    }
    c_len += cands[i].size();
    r_len += refs[i].size();
  }
  return bleu_from_counts(matches, totals, c_len, r_len);
}

inline std::size_t lcs_length(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double rouge_l(std::span<const int> cand, std::span<const int> ref, double beta = 1.2) {
  if (cand.empty() || ref.empty()) return 0.0;
  const auto lcs = static_cast<double>(lcs_length(cand, ref));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(cand.size());
  const double r = lcs / static_cast<double>(ref.size());
  const double b2 = beta * beta;
  return 100.0 * (1.0 + b2) * p * r / (r + b2 * p);
}

struct Alignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

namespace detail {

// Exact-match unigram alignment maximizing matches, then adjacency links
// (equivalently minimizing chunks). Memoized search over
// (candidate position, used reference positions, previous reference index).
class AlignmentSearch {
 public:
  AlignmentSearch(std::span<const int> cand, std::span<const int> ref) : cand_(cand), ref_(ref) {}

  Alignment run() {
    const auto [m, links] = best(0, 0, kNone);
    return {m, m - links};
  }

 private:
  static constexpr std::size_t kNone = 63;
  using Score = std::pair<std::size_t, std::size_t>;  // (matches, links)

  Score best(std::size_t i, std::uint64_t used, std::size_t prev) {
    if (i == cand_.size()) return {0, 0};
    const std::uint64_t key = (used << 12) | (static_cast<std::uint64_t>(i) << 6) | prev;
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    Score result = best(i + 1, used, kNone);
    for (std::size_t j = 0; j < ref_.size(); ++j) {
      if ((used >> j) & 1u || ref_[j] != cand_[i]) continue;
      auto [m, l] = best(i + 1, used | (std::uint64_t{1} << j), j);
      Score s{m + 1, l + ((prev != kNone && prev + 1 == j) ? 1 : 0)};
      result = std::max(result, s);
    }
    memo_.emplace(key, result);
    return result;
  }

  std::span<const int> cand_, ref_;
  std::unordered_map<std::uint64_t, Score> memo_;
};

// Left-to-right greedy alignment for long references.
inline Alignment greedy_alignment(std::span<const int> cand, std::span<const int> ref) {
  std::vector<bool> used(ref.size(), false);
  Alignment a;
  std::size_t prev = ref.size() + 1;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    std::size_t pick = ref.size();
    if (prev + 1 < ref.size() && !used[prev + 1] && ref[prev + 1] == cand[i]) {
      pick = prev + 1;
    } else {
      for (std::size_t j = 0; j < ref.size(); ++j) {
        if (!used[j] && ref[j] == cand[i]) {
          pick = j;
          break;
        }
      }
    }
    if (pick == ref.size()) {
      prev = ref.size() + 1;
      continue;
    }
    used[pick] = true;
    ++a.matches;
    if (!(prev + 1 == pick)) ++a.chunks;
    prev = pick;
  }
  return a;
}

}  // namespace detail

inline Alignment meteor_alignment(std::span<const int> cand, std::span<const int> ref) {
  if (ref.size() <= 20 && cand.size() <= 63) return detail::AlignmentSearch(cand, ref).run();
  return detail::greedy_alignment(cand, ref);
}

// METEOR with exact unigram matching only (no stemming or synonyms).
inline double meteor_exact(std::span<const int> cand, std::span<const int> ref) {
  if (cand.empty() || ref.empty()) return 0.0;
  const auto a = meteor_alignment(cand, ref);
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double p = m / static_cast<double>(cand.size());
  const double r = m / static_cast<double>(ref.size());
  const double fmean = 10.0 * p * r / (r + 9.0 * p);
  const double penalty = 0.5 * std::pow(static_cast<double>(a.chunks) / m, 3.0);
  return 100.0 * fmean * (1.0 - penalty);
}

// CIDEr over a reference corpus: candidates[i] is scored against
// references[i]. Document frequency counts reference sets containing an
// n-gram; IDF is smoothed as ln((1 + N) / (1 + df)) + 1 so single-document
// corpora stay defined. Orders where candidate and reference both have no
// n-grams are skipped.
inline double cider(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references,
                    std::size_t max_n = 4) {
  if (references.empty()) throw ContractError("CIDEr needs a nonempty reference corpus");
  if (candidates.size() != references.size()) throw ContractError("one reference set per candidate required");
  const double n_docs = static_cast<double>(references.size());
  // Per candidate: summed order scores and the number of orders that count.
  std::vector<std::pair<double, std::size_t>> scores(candidates.size(), {0.0, 0});
  for (std::size_t n = 1; n <= max_n; ++n) {
    std::map<NGram, double> df;
    for (const auto& refs : references) {
      std::map<NGram, bool> seen;
      for (const auto& r : refs)
        for (const auto& [g, k] : ngram_counts(r, n)) seen[g] = true;
      for (const auto& [g, _] : seen) df[g] += 1.0;
    }
    auto idf = [&](const NGram& g) {
      auto it = df.find(g);
      const double d = it == df.end() ? 0.0 : it->second;
      return std::log((1.0 + n_docs) / (1.0 + d)) + 1.0;
    };
    auto vec = [&](const Tokens& s) {
      std::map<NGram, double> v;
      for (const auto& [g, k] : ngram_counts(s, n)) v[g] = static_cast<double>(k) * idf(g);
      return v;
    };
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const auto vc = vec(candidates[i]);
      double per_ref = 0.0;
      std::size_t used_refs = 0;
      for (const auto& r : references[i]) {
        const auto vr = vec(r);
        if (vc.empty() && vr.empty()) continue;
        ++used_refs;
        if (vc.empty() || vr.empty()) continue;
        double dot = 0.0, nc = 0.0, nr = 0.0;
        for (const auto& [g, x] : vc) {
          nc += x * x;
          if (auto it = vr.find(g); it != vr.end()) dot += x * it->second;
        }
        for (const auto& [g, y] : vr) nr += y * y;
        per_ref += dot / std::sqrt(nc * nr);
      }
      if (used_refs == 0) continue;
      scores[i].first += 10.0 * per_ref / static_cast<double>(used_refs);
      ++scores[i].second;
    }
  }
  double total = 0.0;
  for (const auto& [sum, orders] : scores) total += orders ? sum / static_cast<double>(orders) : 0.0;
  return total / static_cast<double>(candidates.size());
}

}  // namespace gla::metrics
