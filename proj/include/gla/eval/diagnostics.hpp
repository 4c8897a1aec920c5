#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "gla/train/loss.hpp"
#include "gla/triggers/triggers.hpp"

namespace gla {

// Cosine of two flattened gradients; nullopt when either has zero norm.
inline std::optional<double> gradient_cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("gradient vectors differ in length");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

// Cosine between the adapter gradients of the task loss (clean batch) and
// the attack loss (poison batch).
inline std::optional<double> gradient_orthogonality(ModelParams& params, const std::vector<const SceneSample*>& clean,
                                                    const std::vector<const SceneSample*>& poison) {
  const auto g_task = adapter_gradient(params, clean);
  const auto g_atk = adapter_gradient(params, poison);
  return gradient_cosine(g_task, g_atk);
}

struct GradientCosineSummary {
  std::vector<std::optional<double>> per_pair;
  std::optional<double> mean;  // over defined pairs
};

// Averages the cosine over `pairs` seeded (clean batch, poison batch) draws
// from a mixed training set. Empty summary when the set has no poison.
inline GradientCosineSummary mean_gradient_cosine(ModelParams& params, const std::vector<SampleRecord>& mixed,
                                                  std::size_t pairs, std::size_t batch, std::uint64_t seed) {
  std::vector<const SceneSample*> clean, poison;
  for (const auto& r : mixed) (r.poisoned ? poison : clean).push_back(&r.sample);
  GradientCosineSummary out;
  if (clean.empty() || poison.empty() || pairs == 0) return out;
  Rng rng(derive_seed(seed, 0xc051));
  auto draw = [&](const std::vector<const SceneSample*>& pool) {
    std::vector<const SceneSample*> b;
    for (std::size_t i = 0; i < batch; ++i) {
      b.push_back(pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))]);
    }
    return b;
  };
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t p = 0; p < pairs; ++p) {
    const auto cb = draw(clean);
    const auto pb = draw(poison);
    auto c = gradient_orthogonality(params, cb, pb);
    out.per_pair.push_back(c);
    if (c) {
      sum += *c;
      ++defined;
    }
  }
  if (defined > 0) out.mean = sum / static_cast<double>(defined);
  return out;
}

inline Tensor fused_latent(const ModelParams& params, const SceneSample& s) {
  Tape tape;
  tape.set_grad_enabled(false);
  VisionLanguageModel model(params, tape);
  return model.encode(s.image, s.question).h.value();
}

struct Separability {
  std::size_t pairs = 0;
  double gamma_hat = 0.0;  // minimum ||h' - h||
  double mean = 0.0;
};

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("distance between vectors of different length");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

inline Separability feature_separability(const ModelParams& params, const std::vector<SceneSample>& clean,
                                         const std::vector<SceneSample>& triggered) {
  if (clean.size() != triggered.size()) throw ContractError("separability needs paired samples");
  if (clean.empty()) throw ContractError("separability over an empty pair set");
  Separability out;
  out.pairs = clean.size();
  out.gamma_hat = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double d = l2_distance(fused_latent(params, clean[i]).values(), fused_latent(params, triggered[i]).values());
    out.gamma_hat = std::min(out.gamma_hat, d);
    out.mean += d;
  }
  out.mean /= static_cast<double>(clean.size());
  return out;
}

// Teacher-forced logits for (x, c) and T(x, c), both on the clean answer.
struct RegularizationTrace {
  std::vector<Tensor> clean_logits;
  std::vector<Tensor> triggered_logits;
};

inline double regularization_gap_from_trace(const RegularizationTrace& trace) {
  if (trace.clean_logits.size() != trace.triggered_logits.size() || trace.clean_logits.empty()) {
    throw ContractError("regularization trace must hold matching nonempty logit lists");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < trace.clean_logits.size(); ++i) {
    sum += l2_distance(trace.clean_logits[i].values(), trace.triggered_logits[i].values());
  }
  return sum / static_cast<double>(trace.clean_logits.size());
}

inline RegularizationTrace regularization_trace(const ModelParams& params, const std::vector<SceneSample>& clean,
                                                const TriggerSpec& spec) {
  RegularizationTrace trace;
  for (const auto& s : clean) {
    const auto t = apply_trigger(s, spec).sample;
    const auto target = with_eos(s.answer);
    trace.clean_logits.push_back(model_forward(params, s.image, s.question, target));
    trace.triggered_logits.push_back(model_forward(params, t.image, t.question, target));
  }
  return trace;
}

inline double regularization_gap(const ModelParams& params, const std::vector<SceneSample>& clean,
                                 const TriggerSpec& spec) {
  return regularization_gap_from_trace(regularization_trace(params, clean, spec));
}

// Token-distribution shift between a base-language question corpus and its
// image under the vocabulary map.
inline double kl_shift(const std::vector<std::vector<int>>& base_questions) {
  std::vector<std::vector<int>> shifted;
  shifted.reserve(base_questions.size());
  for (const auto& q : base_questions) shifted.push_back(psi_sparse(q));
  return smoothed_token_kl(base_questions, shifted);
}

}  // namespace gla
