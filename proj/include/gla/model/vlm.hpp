#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gla/model/image.hpp"
#include "gla/model/params.hpp"
#include "gla/numerics/rng.hpp"
#include "gla/numerics/tape.hpp"

namespace gla {

inline constexpr int kPadToken = 0;
inline constexpr int kBosToken = 1;
inline constexpr int kEosToken = 2;

struct ForwardOptions {
  bool training = false;        // enables adapter dropout
  Rng* dropout_rng = nullptr;   // required when training with dropout > 0
  std::optional<double> forced_gate;
};

// Fused multimodal representation h plus the pieces it was blended from.
struct LatentState {
  Var h;
  Var pooled_vision;
  Var pooled_text;
  Var gate;
  Var vision;
  std::optional<Var> text;
};

namespace detail {

inline Tensor sinusoid_positions(std::size_t length, std::size_t d) {
  Tensor pos = Tensor::zeros({length, d});
  for (std::size_t p = 0; p < length; ++p) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      pos.at(p, i) = std::sin(static_cast<double>(p) * freq);
      if (i + 1 < d) pos.at(p, i + 1) = std::cos(static_cast<double>(p) * freq);
    }
  }
  return pos;
}

}  // namespace detail

// Forward pass of the compact vision-language model on one tape. Weights are
// bound by reference; those flagged requires_grad receive gradient.
class VisionLanguageModel {
 public:
  VisionLanguageModel(const ModelParams& params, Tape& tape, ForwardOptions options = {})
      : params_(params), tape_(tape), options_(options) {}

  // Patch embeddings before any attention: [patches x d].
  Var patch_embeddings(const Image& image) {
    const auto& cfg = params_.config;
    if (image.side != cfg.image_size || image.channels != cfg.channels ||
        image.pixels.size() != cfg.image_values()) {
      throw ValidationError("image must be " + std::to_string(cfg.image_size) + "x" +
                            std::to_string(cfg.image_size) + "x" + std::to_string(cfg.channels));
    }
    if (!image.in_range()) throw ValidationError("image pixels must lie in [0, 1]");
    const std::size_t per_side = cfg.patches_per_side(), ps = cfg.patch, ch = cfg.channels;
    Tensor patches = Tensor::zeros({cfg.num_patches(), cfg.patch_dim()});
    for (std::size_t py = 0; py < per_side; ++py) {
      for (std::size_t px = 0; px < per_side; ++px) {
        double* row = patches.mutable_values().data() + (py * per_side + px) * cfg.patch_dim();
        for (std::size_t y = 0; y < ps; ++y)
          for (std::size_t x = 0; x < ps; ++x)
            for (std::size_t c = 0; c < ch; ++c) *row++ = image.at(py * ps + y, px * ps + x, c);
      }
    }
    const auto& b = params_.base;
    Var x = matmul(tape_.constant(std::move(patches)), tape_.bind(b.patch_w));
    x = add_row(x, tape_.bind(b.patch_b));
    return add(x, tape_.bind(b.vis_pos));
  }

  // Sensory encoder: [patches x d] features.
  Var encode_vision(const Image& image) {
    Var x = patch_embeddings(image);
    for (std::size_t i = 0; i < params_.base.vis_blocks.size(); ++i) {
      x = block(x, params_.base.vis_blocks[i], adapter_at(params_.vis_adapters, i), false);
    }
    return layer_norm(x, tape_.bind(params_.base.vis_ln_gain), tape_.bind(params_.base.vis_ln_bias));
  }

  // Context encoder: one feature per token; nullopt for an empty question.
  std::optional<Var> encode_text(std::span<const int> tokens) {
    const auto& cfg = params_.config;
    if (tokens.size() > cfg.max_question) {
      throw ValidationError("question of " + std::to_string(tokens.size()) + " tokens exceeds cap " +
                            std::to_string(cfg.max_question));
    }
    for (int t : tokens) {
      if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab) {
        throw IndexError("question token " + std::to_string(t) + " outside vocabulary");
      }
    }
    if (tokens.empty()) return std::nullopt;
    Var x = embedding(tape_.bind(params_.base.tok_emb), tokens);
    x = add(x, tape_.constant(detail::sinusoid_positions(tokens.size(), cfg.hidden)));
    for (std::size_t i = 0; i < params_.base.txt_blocks.size(); ++i) {
      x = block(x, params_.base.txt_blocks[i], adapter_at(params_.txt_adapters, i), false);
    }
    return layer_norm(x, tape_.bind(params_.base.txt_ln_gain), tape_.bind(params_.base.txt_ln_bias));
  }

  // Gated pooling: the mean text feature queries the patch features, and a
  // sigmoid gate blends the pooled vision vector with the pooled text vector.
  LatentState fuse(Var vision, std::optional<Var> text) {
    const auto& b = params_.base;
    Var query = text ? mean_rows(*text) : tape_.bind(b.null_text);
    Var qp = matmul(query, tape_.bind(b.pool_wq));
    Var kp = matmul(vision, tape_.bind(b.pool_wk));
    Var pooled = attention(qp, kp, vision, 1, false);
    Var gate;
    if (options_.forced_gate) {
      gate = tape_.constant(Tensor::scalar(*options_.forced_gate));
    } else {
      Var logit = matmul(concat_cols(pooled, query), tape_.bind(b.gate_w));
      gate = sigmoid(add(logit, tape_.bind(b.gate_b)));
    }
    Var h = add(mul(gate, pooled), mul(add_scalar(scale(gate, -1.0), 1.0), query));
    return LatentState{h, pooled, query, gate, vision, text};
  }

  LatentState encode(const Image& image, std::span<const int> question) {
    Var vision = encode_vision(image);
    return fuse(vision, encode_text(question));
  }

  // Teacher-forced decoder: input tokens (starting with BOS) -> [T x V] logits.
  Var decode_logits(Var h, std::span<const int> inputs) {
    const auto& cfg = params_.config;
    if (inputs.empty()) throw ValidationError("decoder needs at least the start token");
    if (inputs.size() > cfg.max_answer) {
      throw ValidationError("decoder prefix of " + std::to_string(inputs.size()) + " exceeds answer cap " +
                            std::to_string(cfg.max_answer));
    }
    const auto& b = params_.base;
    Var x = embedding(tape_.bind(b.dec_emb), inputs);
    x = add(x, tape_.constant(detail::sinusoid_positions(inputs.size(), cfg.hidden)));
    x = add_row(x, h);
    for (std::size_t i = 0; i < b.dec_blocks.size(); ++i) {
      x = block(x, b.dec_blocks[i], adapter_at(params_.dec_adapters, i), true);
    }
    x = layer_norm(x, tape_.bind(b.dec_ln_gain), tape_.bind(b.dec_ln_bias));
    return add_row(matmul(x, tape_.bind(b.head_w)), tape_.bind(b.head_b));
  }

  // Teacher forcing for a full answer (ending in EOS): logits predicting it.
  Var answer_logits(Var h, std::span<const int> answer) {
    std::vector<int> inputs{kBosToken};
    inputs.insert(inputs.end(), answer.begin(), answer.empty() ? answer.end() : answer.end() - 1);
    return decode_logits(h, inputs);
  }

  Var forward(const Image& image, std::span<const int> question, std::span<const int> answer) {
    return answer_logits(encode(image, question).h, answer);
  }

  // Greedy decoding until EOS or max_tokens; EOS is not included.
  std::vector<int> generate(Var h, std::size_t max_tokens) {
    const std::size_t cap = std::min(max_tokens, params_.config.max_answer);
    std::vector<int> inputs{kBosToken};
    std::vector<int> out;
    while (out.size() < cap) {
      Var logits = decode_logits(h, inputs);
      const Tensor& lv = logits.value();
      const std::size_t v = lv.cols();
      const double* last = lv.values().data() + (lv.rows() - 1) * v;
      const int next = static_cast<int>(std::max_element(last, last + v) - last);
      if (next == kEosToken) break;
      out.push_back(next);
      inputs.push_back(next);
    }
    return out;
  }

 private:
  static const LowRankAdapter* pick(const std::vector<BlockAdapters>& adapters, std::size_t i, bool query) {
    if (i >= adapters.size()) return nullptr;
    return query ? &adapters[i].q : &adapters[i].v;
  }

  struct BlockAdapterRefs {
    const LowRankAdapter* q = nullptr;
    const LowRankAdapter* v = nullptr;
  };

  static BlockAdapterRefs adapter_at(const std::vector<BlockAdapters>& adapters, std::size_t i) {
    return {pick(adapters, i, true), pick(adapters, i, false)};
  }

  // x W0 + b, plus scale * dropout(x) B A when an adapter is attached.
  Var linear(Var x, const Tensor& w, const Tensor& b, const LowRankAdapter* adapter) {
    Var y = add_row(matmul(x, tape_.bind(w)), tape_.bind(b));
    if (!adapter) return y;
    Var in = x;
    const double p = params_.config.adapter_dropout;
    if (options_.training && p > 0.0) {
      if (!options_.dropout_rng) throw ContractError("training forward needs a dropout generator");
      Tensor mask = Tensor::zeros(x.shape());
      const double keep = 1.0 / (1.0 - p);
      for (auto& m : mask.mutable_values()) m = options_.dropout_rng->bernoulli(p) ? 0.0 : keep;
      in = mul(x, tape_.constant(std::move(mask)));
    }
    Var low = matmul(matmul(in, tape_.bind(adapter->b)), tape_.bind(adapter->a));
    return add(y, scale(low, params_.config.adapter_scale()));
  }

  Var block(Var x, const BlockWeights& w, BlockAdapterRefs adapters, bool causal) {
    Var a = layer_norm(x, tape_.bind(w.ln1_gain), tape_.bind(w.ln1_bias));
    Var q = linear(a, w.wq, w.bq, adapters.q);
    Var k = linear(a, w.wk, w.bk, nullptr);
    Var v = linear(a, w.wv, w.bv, adapters.v);
    Var att = attention(q, k, v, params_.config.heads, causal);
    x = add(x, linear(att, w.wo, w.bo, nullptr));
    Var f = layer_norm(x, tape_.bind(w.ln2_gain), tape_.bind(w.ln2_bias));
    Var ff = linear(gelu(linear(f, w.w1, w.b1, nullptr)), w.w2, w.b2, nullptr);
    return add(x, ff);
  }

  const ModelParams& params_;
  Tape& tape_;
  ForwardOptions options_;
};

// Convenience: teacher-forced logits with a throwaway tape (inference).
inline Tensor model_forward(const ModelParams& params, const Image& image, std::span<const int> question,
                            std::span<const int> answer) {
  Tape tape;
  tape.set_grad_enabled(false);
  VisionLanguageModel model(params, tape);
  return model.forward(image, question, answer).value();
}

inline std::vector<int> generate_answer(const ModelParams& params, const Image& image, std::span<const int> question,
                                        std::size_t max_tokens) {
  Tape tape;
  tape.set_grad_enabled(false);
  VisionLanguageModel model(params, tape);
  return model.generate(model.encode(image, question).h, max_tokens);
}

}  // namespace gla
