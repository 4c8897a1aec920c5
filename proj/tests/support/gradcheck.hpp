#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gla/numerics/rng.hpp"
#include "gla/numerics/tape.hpp"

namespace gla::testing {

// One differentiable expression over leaf tensors; the output is contracted
// with fixed random weights so every output entry contributes to the check.
struct GradCase {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<Var(Tape&, const std::vector<Var>&)> build;
};

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.mutable_values()) v = rng.uniform(lo, hi);
  return t;
}

// Entries bounded away from zero, for kinked activations.
inline Tensor away_from_zero(Rng& rng, Shape shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.mutable_values()) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
  return t;
}

struct GradReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central differences against the tape. Relative error is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-4).
inline GradReport check_gradients(GradCase c, std::uint64_t projection_seed, double h = 1e-5) {
  std::vector<Tensor> leaves = std::move(c.inputs);
  for (auto& t : leaves) t.set_requires_grad(true);

  auto evaluate = [&](bool with_grad, Tensor* weights) {
    Tape tape;
    tape.set_grad_enabled(with_grad);
    std::vector<Var> vars;
    for (const auto& t : leaves) vars.push_back(tape.bind(t));
    Var out = c.build(tape, vars);
    if (weights->size() == 0) {
      Rng rng(projection_seed);
      *weights = random_tensor(rng, out.value().shape(), 0.5, 1.5);
    }
    Var loss = sum(mul(out, tape.constant(*weights)));
    if (with_grad) tape.backward(loss);
    return loss.value().values()[0];
  };

  Tensor weights;
  for (auto& t : leaves) t.clear_grad();
  evaluate(true, &weights);
  std::vector<std::vector<double>> analytic;
  for (auto& t : leaves) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(t.size(), 0.0);
  }

  GradReport report;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    auto values = leaves[i].mutable_values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double keep = values[j];
      values[j] = keep + h;
      const double up = evaluate(false, &weights);
      values[j] = keep - h;
      const double down = evaluate(false, &weights);
      values[j] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-4});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(a - numeric) / denom);
      ++report.checked;
    }
  }
  return report;
}

// Every differentiable operation, instantiated at random shapes for one seed.
inline std::vector<GradCase> operation_cases(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t m = static_cast<std::size_t>(rng.uniform_int(2, 4));
  const std::size_t k = static_cast<std::size_t>(rng.uniform_int(2, 5));
  const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 4));
  std::vector<GradCase> cases;

  cases.push_back({"matmul", {random_tensor(rng, {m, k}), random_tensor(rng, {k, n})},
                   [](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); }});
  cases.push_back({"add", {random_tensor(rng, {m, n}), random_tensor(rng, {m, n})},
                   [](Tape&, const std::vector<Var>& v) { return add(v[0], v[1]); }});
  cases.push_back({"sub", {random_tensor(rng, {m, n}), random_tensor(rng, {m, n})},
                   [](Tape&, const std::vector<Var>& v) { return sub(v[0], v[1]); }});
  cases.push_back({"mul", {random_tensor(rng, {m, n}), random_tensor(rng, {m, n})},
                   [](Tape&, const std::vector<Var>& v) { return mul(v[0], v[1]); }});
  cases.push_back({"mul_scalar_broadcast", {random_tensor(rng, {1}), random_tensor(rng, {m, n})},
                   [](Tape&, const std::vector<Var>& v) { return mul(v[0], v[1]); }});
  cases.push_back({"sub_scalar_broadcast", {random_tensor(rng, {m, n}), random_tensor(rng, {1})},
                   [](Tape&, const std::vector<Var>& v) { return sub(v[0], v[1]); }});
  const double factor = rng.uniform(-2.0, 2.0);
  cases.push_back({"scale", {random_tensor(rng, {m, n})},
                   [factor](Tape&, const std::vector<Var>& v) { return scale(v[0], factor); }});
  cases.push_back({"add_scalar", {random_tensor(rng, {m, n})},
                   [](Tape&, const std::vector<Var>& v) { return add_scalar(v[0], 0.7); }});
  cases.push_back({"relu", {away_from_zero(rng, {m, n})},
                   [](Tape&, const std::vector<Var>& v) { return relu(v[0]); }});
  cases.push_back({"gelu", {random_tensor(rng, {m, n}, -3.0, 3.0)},
                   [](Tape&, const std::vector<Var>& v) { return gelu(v[0]); }});
  cases.push_back({"sigmoid", {random_tensor(rng, {m, n}, -4.0, 4.0)},
                   [](Tape&, const std::vector<Var>& v) { return sigmoid(v[0]); }});
  cases.push_back({"sum", {random_tensor(rng, {m, n})}, [](Tape&, const std::vector<Var>& v) { return sum(v[0]); }});
  cases.push_back({"mean", {random_tensor(rng, {m, n})}, [](Tape&, const std::vector<Var>& v) { return mean(v[0]); }});
  cases.push_back({"mean_rows", {random_tensor(rng, {m, n})},
                   [](Tape&, const std::vector<Var>& v) { return mean_rows(v[0]); }});
  cases.push_back({"add_row", {random_tensor(rng, {m, n}), random_tensor(rng, {n})},
                   [](Tape&, const std::vector<Var>& v) { return add_row(v[0], v[1]); }});
  cases.push_back({"softmax_rows", {random_tensor(rng, {m, n}, -2.0, 2.0)},
                   [](Tape&, const std::vector<Var>& v) { return softmax_rows(v[0]); }});
  std::vector<int> targets;
  for (std::size_t i = 0; i < m; ++i) targets.push_back(static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1)));
  cases.push_back({"cross_entropy", {random_tensor(rng, {m, n}, -2.0, 2.0)},
                   [targets](Tape&, const std::vector<Var>& v) { return cross_entropy(v[0], targets); }});
  cases.push_back({"layer_norm",
                   {random_tensor(rng, {m, k + 2}), random_tensor(rng, {k + 2}, 0.5, 1.5), random_tensor(rng, {k + 2})},
                   [](Tape&, const std::vector<Var>& v) { return layer_norm(v[0], v[1], v[2]); }});
  std::vector<int> ids;
  for (std::size_t i = 0; i < m + 2; ++i) ids.push_back(static_cast<int>(rng.uniform_int(0, 3)));
  cases.push_back({"embedding", {random_tensor(rng, {4, n})},
                   [ids](Tape&, const std::vector<Var>& v) { return embedding(v[0], ids); }});
  cases.push_back({"concat_cols", {random_tensor(rng, {m, k}), random_tensor(rng, {m, n})},
                   [](Tape&, const std::vector<Var>& v) { return concat_cols(v[0], v[1]); }});
  const std::size_t heads = static_cast<std::size_t>(rng.uniform_int(1, 2));
  const std::size_t d = heads * 3, nk = m + 1;
  cases.push_back({"attention", {random_tensor(rng, {m, d}), random_tensor(rng, {nk, d}), random_tensor(rng, {nk, d})},
                   [heads](Tape&, const std::vector<Var>& v) { return attention(v[0], v[1], v[2], heads, false); }});
  cases.push_back({"attention_causal", {random_tensor(rng, {m, d}), random_tensor(rng, {m, d}), random_tensor(rng, {m, d})},
                   [heads](Tape&, const std::vector<Var>& v) { return attention(v[0], v[1], v[2], heads, true); }});
  // A composite chain reusing one leaf along several paths.
  cases.push_back({"chain_reuse", {random_tensor(rng, {m, n}), random_tensor(rng, {n, n})},
                   [](Tape&, const std::vector<Var>& v) {
                     Var y = gelu(matmul(v[0], v[1]));
                     return softmax_rows(add(y, mul(v[0], v[0])));
                   }});
  return cases;
}

}  // namespace gla::testing
