#pragma once

#include <optional>
#include <vector>

#include "gla/model/vlm.hpp"
#include "gla/scene/dataset.hpp"

namespace gla {

// Answer followed by EOS: the teacher-forcing target sequence.
inline std::vector<int> with_eos(const std::vector<int>& answer) {
  std::vector<int> out = answer;
  out.push_back(kEosToken);
  return out;
}

// Mean token cross-entropy of one sample's answer.
inline Var sample_loss(VisionLanguageModel& model, const SceneSample& s) {
  const auto target = with_eos(s.answer);
  Var logits = model.answer_logits(model.encode(s.image, s.question).h, target);
  return cross_entropy(logits, target);
}

inline Var mean_of(Tape& tape, const std::vector<Var>& terms) {
  if (terms.empty()) return tape.constant(Tensor::scalar(0.0));
  Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return scale(acc, 1.0 / static_cast<double>(terms.size()));
}

struct CombinedLoss {
  Var total;
  std::optional<Var> task;    // mean CE over the clean part
  std::optional<Var> attack;  // mean CE over the poisoned part
};

// L = mean CE(clean) + lambda * mean CE(poison); either part may be empty.
inline CombinedLoss combined_loss(VisionLanguageModel& model, Tape& tape, const std::vector<const SceneSample*>& clean,
                                  const std::vector<const SceneSample*>& poison, double lambda) {
  if (clean.empty() && poison.empty()) throw ContractError("combined loss needs at least one sample");
  CombinedLoss out;
  std::vector<Var> terms;
  for (const auto* s : clean) terms.push_back(sample_loss(model, *s));
  if (!clean.empty()) out.task = mean_of(tape, terms);
  terms.clear();
  for (const auto* s : poison) terms.push_back(sample_loss(model, *s));
  if (!poison.empty()) out.attack = mean_of(tape, terms);
  if (out.task && out.attack) {
    out.total = add(*out.task, scale(*out.attack, lambda));
  } else if (out.task) {
    out.total = *out.task;
  } else {
    out.total = scale(*out.attack, lambda);
  }
  return out;
}

inline std::vector<Tensor*> adapter_tensors(ModelParams& params) {
  std::vector<Tensor*> out;
  params.visit_adapters([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

inline std::vector<Tensor*> base_tensors(ModelParams& params) {
  std::vector<Tensor*> out;
  params.visit_base([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

// Flattened adapter gradient of the mean loss over a batch, evaluated
// without dropout. Parameter gradients are cleared before and after.
inline std::vector<double> adapter_gradient(ModelParams& params, const std::vector<const SceneSample*>& batch) {
  if (batch.empty()) throw ContractError("gradient of an empty batch");
  params.set_trainable(false, true);
  params.zero_grad();
  {
    Tape tape;
    VisionLanguageModel model(params, tape);
    std::vector<Var> terms;
    for (const auto* s : batch) terms.push_back(sample_loss(model, *s));
    tape.backward(mean_of(tape, terms));
  }
  std::vector<double> flat;
  for (Tensor* t : adapter_tensors(params)) {
    if (t->has_grad()) {
      flat.insert(flat.end(), t->grad().begin(), t->grad().end());
    } else {
      flat.insert(flat.end(), t->size(), 0.0);
    }
  }
  params.zero_grad();
  return flat;
}

}  // namespace gla
