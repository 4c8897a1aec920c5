#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gla/numerics/tensor.hpp"

namespace gla {

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Define-by-run computation record. Nodes are appended in evaluation order
// and backward() walks them in exact reverse order, accumulating gradients
// additively into every consumer's inputs.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A value owned by the tape that never receives gradient.
  Var constant(Tensor value) {
    Node node;
    node.owned = std::move(value);
    return push(std::move(node));
  }

  // Binds a parameter by reference. When the tensor requires grad, backward
  // accumulates into its gradient buffer.
  Var bind(const Tensor& param) {
    Node node;
    node.ref = &param;
    if (param.requires_grad() && grad_enabled_) {
      node.param = &param;
      node.needs_grad = true;
    }
    return push(std::move(node));
  }

  // Records an operation result. The backward closure runs only when some
  // input needs gradient; otherwise it is dropped immediately.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    Node node;
    node.owned = std::move(value);
    for (const auto& in : inputs) {
      if (in.tape != this) throw ContractError("operation mixes values from different tapes");
      if (nodes_[in.id].needs_grad) node.needs_grad = true;
    }
    if (node.needs_grad && grad_enabled_) node.backward = std::move(backward);
    node.needs_grad = node.needs_grad && grad_enabled_;
    return push(std::move(node));
  }

  const Tensor& value(std::size_t id) const {
    const auto& node = nodes_[id];
    return node.ref ? *node.ref : node.owned;
  }
  const Tensor& value(Var v) const { return value(v.id); }

  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  // Upstream gradient of node id (allocated lazily, zero-initialized).
  std::span<double> grad(std::size_t id) {
    auto& node = nodes_[id];
    if (node.grad.empty()) node.grad.assign(value(id).size(), 0.0);
    return node.grad;
  }
  std::span<double> grad(Var v) { return grad(v.id); }

  std::span<const double> grad_view(Var v) const { return nodes_[v.id].grad; }

  std::size_t size() const { return nodes_.size(); }

  // Disables recording of backward closures (inference mode).
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  void backward(Var root) {
    if (root.tape != this || root.id >= nodes_.size()) {
      throw ContractError("backward root is not recorded on this tape");
    }
    if (!value(root).is_scalar()) {
      throw ContractError("backward root must be scalar, got shape " + shape_string(value(root).shape()));
    }
    auto root_grad = grad(root.id);
    root_grad[0] += 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (!node.needs_grad || node.grad.empty()) continue;
      if (node.backward) {
        node.backward(*this, i);
      } else if (node.param) {
        auto dst = node.param->mutable_grad();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += node.grad[j];
      }
    }
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    const Tensor* param = nullptr;
    std::vector<double> grad;
    bool needs_grad = false;
    BackwardFn backward;
  };

  Var push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {

inline void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operation mixes values from different tapes");
}

inline void require_matrix(const Tensor& t, const char* what) {
  if (t.shape().size() > 2) {
    throw DimensionError(std::string(what) + " expects a matrix, got " + shape_string(t.shape()));
  }
}

inline Shape matrix_shape(std::size_t rows, std::size_t cols) { return {rows, cols}; }

inline void accumulate(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

inline void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string(what) + " received non-finite input");
}

}  // namespace detail

// c = a * b for a [m x k], b [k x n].
inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "matmul");
  detail::require_matrix(bv, "matmul");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw DimensionError("matmul inner extents differ: " + shape_string(av.shape()) + " x " +
                         shape_string(bv.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  kernels::gemm_nn(av.values().data(), bv.values().data(), out.mutable_values().data(), m, k, n);
  return a.tape->record(std::move(out), {a, b}, [a, b, m, k, n](Tape& tape, std::size_t self) {
    const auto g = tape.grad(self);
    if (tape.needs_grad(a)) {
      kernels::gemm_nt(g.data(), tape.value(b).values().data(), tape.grad(a).data(), m, n, k);
    }
    if (tape.needs_grad(b)) {
      kernels::gemm_tn(tape.value(a).values().data(), g.data(), tape.grad(b).data(), m, k, n);
    }
  });
}

namespace detail {

enum class BinaryKind { add, sub, mul };

inline Var binary(Var a, Var b, BinaryKind kind, const char* name) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool a_scalar = av.is_scalar() && !bv.is_scalar();
  const bool b_scalar = bv.is_scalar() && !av.is_scalar();
  if (!a_scalar && !b_scalar && av.shape() != bv.shape()) {
    throw DimensionError(std::string(name) + " shape mismatch: " + shape_string(av.shape()) + " vs " +
                         shape_string(bv.shape()));
  }
  const Tensor& big = a_scalar ? bv : av;
  Tensor out = Tensor::zeros(big.shape());
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double x = a_scalar ? av[0] : av[i];
    const double y = b_scalar ? bv[0] : bv[i];
    switch (kind) {
      case BinaryKind::add: o[i] = x + y; break;
      case BinaryKind::sub: o[i] = x - y; break;
      case BinaryKind::mul: o[i] = x * y; break;
    }
  }
  return a.tape->record(std::move(out), {a, b}, [a, b, a_scalar, b_scalar, kind](Tape& tape, std::size_t self) {
    const auto g = tape.grad(self);
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    if (tape.needs_grad(a)) {
      auto ga = tape.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double d = g[i];
        if (kind == BinaryKind::mul) d *= b_scalar ? bv[0] : bv[i];
        ga[a_scalar ? 0 : i] += d;
      }
    }
    if (tape.needs_grad(b)) {
      auto gb = tape.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double d = g[i];
        if (kind == BinaryKind::sub) d = -d;
        if (kind == BinaryKind::mul) d *= a_scalar ? av[0] : av[i];
        gb[b_scalar ? 0 : i] += d;
      }
    }
  });
}

template <typename Forward, typename Derivative>
Var unary(Var x, Forward forward, Derivative derivative) {
  const Tensor& xv = x.value();
  Tensor out = Tensor::zeros(xv.shape());
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = forward(xv[i]);
  return x.tape->record(std::move(out), {x}, [x, derivative](Tape& tape, std::size_t self) {
    const auto g = tape.grad(self);
    const Tensor& xv = tape.value(x);
    const Tensor& yv = tape.value(self);
    auto gx = tape.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * derivative(xv[i], yv[i]);
  });
}

}  // namespace detail

inline Var add(Var a, Var b) { return detail::binary(a, b, detail::BinaryKind::add, "add"); }
inline Var sub(Var a, Var b) { return detail::binary(a, b, detail::BinaryKind::sub, "sub"); }
inline Var mul(Var a, Var b) { return detail::binary(a, b, detail::BinaryKind::mul, "mul"); }

inline Var scale(Var x, double factor) {
  return detail::unary(
      x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

inline Var add_scalar(Var x, double offset) {
  return detail::unary(
      x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

inline Var relu(Var x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

// tanh approximation of GELU.
inline Var gelu(Var x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return detail::unary(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v))); },
      [](double v, double) {
        const double u = c * (v + k * v * v * v);
        const double t = std::tanh(u);
        const double du = c * (1.0 + 3.0 * k * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

inline Var sigmoid(Var x) {
  return detail::unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var sum(Var x) {
  const Tensor& xv = x.value();
  double total = 0.0;
  for (double v : xv.values()) total += v;
  return x.tape->record(Tensor::scalar(total), {x}, [x](Tape& tape, std::size_t self) {
    const double g = tape.grad(self)[0];
    for (auto& gx : tape.grad(x)) gx += g;
  });
}

inline Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

// Column means of a [m x n] matrix, returned as [1 x n].
inline Var mean_rows(Var x) {
  const Tensor& xv = x.value();
  detail::require_matrix(xv, "mean_rows");
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out = Tensor::zeros({1, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += xv[i * n + j];
  for (std::size_t j = 0; j < n; ++j) out[j] /= static_cast<double>(m);
  return x.tape->record(std::move(out), {x}, [x, m, n](Tape& tape, std::size_t self) {
    const auto g = tape.grad(self);
    auto gx = tape.grad(x);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j] * inv;
  });
}

// x [m x n] + row [1 x n] broadcast over rows.
inline Var add_row(Var x, Var row) {
  detail::require_same_tape(x, row);
  const Tensor& xv = x.value();
  const Tensor& rv = row.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (rv.size() != n) {
    throw DimensionError("add_row shape mismatch: " + shape_string(xv.shape()) + " vs " +
                         shape_string(rv.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + rv[j];
  return x.tape->record(std::move(out), {x, row}, [x, row, m, n](Tape& tape, std::size_t self) {
    const auto g = tape.grad(self);
    if (tape.needs_grad(x)) detail::accumulate(tape.grad(x), g);
    if (tape.needs_grad(row)) {
      auto gr = tape.grad(row);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
    }
  });
}

// Row-wise softmax, stabilized by subtracting the row maximum.
inline Var softmax_rows(Var x) {
  const Tensor& xv = x.value();
  detail::require_matrix(xv, "softmax_rows");
  detail::require_finite(xv, "softmax_rows");
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out = Tensor::zeros(xv.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.values().data() + i * n;
    double* o = out.mutable_values().data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  return x.tape->record(std::move(out), {x}, [x, m, n](Tape& tape, std::size_t self) {
    const auto g = tape.grad(self);
    const Tensor& y = tape.value(self);
    auto gx = tape.grad(x);
    for (std::size_t i = 0; i < m; ++i) {
      const double inner = kernels::dot(g.data() + i * n, y.values().data() + i * n, n);
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[i * n + j] * (g[i * n + j] - inner);
    }
  });
}

// Mean token negative log-likelihood of targets under row-wise softmax(logits).
inline Var cross_entropy(Var logits, std::span<const int> targets) {
  const Tensor& lv = logits.value();
  detail::require_matrix(lv, "cross_entropy");
  detail::require_finite(lv, "cross_entropy");
  const std::size_t t_len = lv.rows(), vocab = lv.cols();
  if (targets.size() != t_len) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_string(lv.shape()));
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  for (int id : tgt) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("cross_entropy target " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
  std::vector<double> probs(lv.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < t_len; ++i) {
    const double* row = lv.values().data() + i * vocab;
    double* p = probs.data() + i * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += (p[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < vocab; ++j) p[j] /= z;
    loss -= row[tgt[i]] - mx - std::log(z);
  }
  loss /= static_cast<double>(t_len);
  return logits.tape->record(
      Tensor::scalar(loss), {logits},
      [logits, tgt = std::move(tgt), probs = std::move(probs), t_len, vocab](Tape& tape, std::size_t self) {
        const double g = tape.grad(self)[0] / static_cast<double>(t_len);
        auto gl = tape.grad(logits);
        for (std::size_t i = 0; i < t_len; ++i) {
          for (std::size_t j = 0; j < vocab; ++j) gl[i * vocab + j] += g * probs[i * vocab + j];
          gl[i * vocab + static_cast<std::size_t>(tgt[i])] -= g;
        }
      });
}

// Per-row layer normalization with learned gain and bias ([1 x n] each).
inline Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
  detail::require_same_tape(x, gain);
  detail::require_same_tape(x, bias);
  const Tensor& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gain.value().size() != n || bias.value().size() != n) {
    throw DimensionError("layer_norm parameter shapes " + shape_string(gain.value().shape()) + ", " +
                         shape_string(bias.value().shape()) + " do not match input " +
                         shape_string(xv.shape()));
  }
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  Tensor out = Tensor::zeros(xv.shape());
  std::vector<double> normed(xv.size());
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.values().data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      normed[i * n + j] = (row[j] - mu) * inv_std[i];
      out[i * n + j] = normed[i * n + j] * gv[j] + bv[j];
    }
  }
  return x.tape->record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, m, n, normed = std::move(normed), inv_std = std::move(inv_std)](Tape& tape,
                                                                                      std::size_t self) {
        const auto g = tape.grad(self);
        const Tensor& gv = tape.value(gain);
        if (tape.needs_grad(gain)) {
          auto gg = tape.grad(gain);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * normed[i * n + j];
        }
        if (tape.needs_grad(bias)) {
          auto gb = tape.grad(bias);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
        if (tape.needs_grad(x)) {
          auto gx = tape.grad(x);
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double sum_d = 0.0, sum_dn = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g[i * n + j] * gv[j];
              sum_d += d;
              sum_dn += d * normed[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g[i * n + j] * gv[j];
              gx[i * n + j] += inv_std[i] * (d - inv_n * sum_d - normed[i * n + j] * inv_n * sum_dn);
            }
          }
        }
      });
}

// Gathers rows of table [V x d] for ids, producing [T x d].
inline Var embedding(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  const std::size_t vocab = tv.rows(), d = tv.cols();
  if (ids.empty()) throw DimensionError("embedding lookup of an empty id sequence");
  std::vector<int> idx(ids.begin(), ids.end());
  Tensor out = Tensor::zeros({idx.size(), d});
  for (std::size_t t = 0; t < idx.size(); ++t) {
    if (idx[t] < 0 || static_cast<std::size_t>(idx[t]) >= vocab) {
      throw IndexError("token id " + std::to_string(idx[t]) + " outside vocabulary of " + std::to_string(vocab));
    }
    std::copy_n(tv.values().data() + static_cast<std::size_t>(idx[t]) * d, d, out.mutable_values().data() + t * d);
  }
  return table.tape->record(std::move(out), {table}, [table, idx = std::move(idx), d](Tape& tape, std::size_t self) {
    const auto g = tape.grad(self);
    auto gt = tape.grad(table);
    for (std::size_t t = 0; t < idx.size(); ++t)
      for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(idx[t]) * d + j] += g[t * d + j];
  });
}

// [m x p] | [m x q] -> [m x (p+q)]
inline Var concat_cols(Var a, Var b) {
  detail::require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = av.rows(), p = av.cols(), q = bv.cols();
  if (bv.rows() != m) {
    throw DimensionError("concat_cols row mismatch: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  }
  Tensor out = Tensor::zeros({m, p + q});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(av.values().data() + i * p, p, out.mutable_values().data() + i * (p + q));
    std::copy_n(bv.values().data() + i * q, q, out.mutable_values().data() + i * (p + q) + p);
  }
  return a.tape->record(std::move(out), {a, b}, [a, b, m, p, q](Tape& tape, std::size_t self) {
    const auto g = tape.grad(self);
    if (tape.needs_grad(a)) {
      auto ga = tape.grad(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += g[i * (p + q) + j];
    }
    if (tape.needs_grad(b)) {
      auto gb = tape.grad(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += g[i * (p + q) + p + j];
    }
  });
}

// Multi-head scaled dot-product attention over pre-projected q [nq x d],
// k [nk x d], v [nk x d]. Heads are contiguous column blocks of width d/heads.
// With causal set, query i attends to keys 0..i only (requires nq == nk).
inline Var attention(Var q, Var k, Var v, std::size_t heads, bool causal) {
  detail::require_same_tape(q, k);
  detail::require_same_tape(q, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  const std::size_t nq = qv.rows(), nk = kv.rows(), d = qv.cols();
  if (kv.cols() != d || vv.cols() != d || vv.rows() != nk) {
    throw DimensionError("attention shapes disagree: q " + shape_string(qv.shape()) + ", k " +
                         shape_string(kv.shape()) + ", v " + shape_string(vv.shape()));
  }
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
  if (causal && nq != nk) throw DimensionError("causal attention needs equal query and key counts");
  const std::size_t hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> probs(heads * nq * nk, 0.0);
  Tensor out = Tensor::zeros({nq, d});
  const double* qp = qv.values().data();
  const double* kp = kv.values().data();
  const double* vp = vv.values().data();
  double* op = out.mutable_values().data();
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t i = 0; i < nq; ++i) {
      double* p = probs.data() + (h * nq + i) * nk;
      const std::size_t limit = causal ? i + 1 : nk;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < limit; ++j) {
        p[j] = scale * kernels::dot(qp + i * d + off, kp + j * d + off, hd);
        mx = std::max(mx, p[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < limit; ++j) z += (p[j] = std::exp(p[j] - mx));
      for (std::size_t j = 0; j < limit; ++j) p[j] /= z;
      double* orow = op + i * d + off;
      for (std::size_t j = 0; j < limit; ++j) {
        const double w = p[j];
        const double* vrow = vp + j * d + off;
        for (std::size_t c = 0; c < hd; ++c) orow[c] += w * vrow[c];
      }
    }
  }
  return q.tape->record(
      std::move(out), {q, k, v},
      [q, k, v, heads, causal, nq, nk, d, hd, scale, probs = std::move(probs)](Tape& tape, std::size_t self) {
        const auto g = tape.grad(self);
        const double* qp = tape.value(q).values().data();
        const double* kp = tape.value(k).values().data();
        const double* vp = tape.value(v).values().data();
        const bool want_q = tape.needs_grad(q), want_k = tape.needs_grad(k), want_v = tape.needs_grad(v);
        double* gq = want_q ? tape.grad(q).data() : nullptr;
        double* gk = want_k ? tape.grad(k).data() : nullptr;
        double* gv = want_v ? tape.grad(v).data() : nullptr;
        std::vector<double> dp(nk);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * hd;
          for (std::size_t i = 0; i < nq; ++i) {
            const double* p = probs.data() + (h * nq + i) * nk;
            const double* grow = g.data() + i * d + off;
            const std::size_t limit = causal ? i + 1 : nk;
            double inner = 0.0;
            for (std::size_t j = 0; j < limit; ++j) {
              dp[j] = kernels::dot(grow, vp + j * d + off, hd);
              inner += dp[j] * p[j];
              if (gv) {
                double* gvrow = gv + j * d + off;
                for (std::size_t c = 0; c < hd; ++c) gvrow[c] += p[j] * grow[c];
              }
            }
            for (std::size_t j = 0; j < limit; ++j) {
              const double ds = p[j] * (dp[j] - inner) * scale;
              if (ds == 0.0) continue;
              if (gq) {
                double* gqrow = gq + i * d + off;
                const double* krow = kp + j * d + off;
                for (std::size_t c = 0; c < hd; ++c) gqrow[c] += ds * krow[c];
              }
              if (gk) {
                double* gkrow = gk + j * d + off;
                const double* qrow = qp + i * d + off;
                for (std::size_t c = 0; c < hd; ++c) gkrow[c] += ds * qrow[c];
              }
            }
          }
        }
      });
}

}  // namespace gla
