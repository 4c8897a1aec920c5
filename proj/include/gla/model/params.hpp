#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gla/model/config.hpp"
#include "gla/numerics/rng.hpp"
#include "gla/numerics/tensor.hpp"

namespace gla {

struct BlockWeights {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor w1, b1, w2, b2;
};

// Low-rank update B*A for a [d_in x d_out] weight: B is [d_in x r], A is [r x d_out].
struct LowRankAdapter {
  Tensor b;
  Tensor a;
};

struct BlockAdapters {
  LowRankAdapter q;
  LowRankAdapter v;
};

// Frozen base weights (the pretrained parameters) of every sub-network.
struct BaseWeights {
  Tensor patch_w, patch_b, vis_pos;
  std::vector<BlockWeights> vis_blocks;
  Tensor vis_ln_gain, vis_ln_bias;

  Tensor tok_emb;
  std::vector<BlockWeights> txt_blocks;
  Tensor txt_ln_gain, txt_ln_bias;

  Tensor pool_wq, pool_wk;
  Tensor gate_w, gate_b;
  Tensor null_text;

  Tensor dec_emb;
  std::vector<BlockWeights> dec_blocks;
  Tensor dec_ln_gain, dec_ln_bias;
  Tensor head_w, head_b;
};

struct ModelParams {
  VLMConfig config;
  BaseWeights base;
  std::vector<BlockAdapters> vis_adapters, txt_adapters, dec_adapters;

  template <typename Self, typename Fn>
  static void visit_base_impl(Self& self, Fn&& fn) {
    auto& b = self.base;
    auto block = [&](const std::string& prefix, auto& w) {
      fn(prefix + ".ln1_gain", w.ln1_gain);
      fn(prefix + ".ln1_bias", w.ln1_bias);
      fn(prefix + ".wq", w.wq);
      fn(prefix + ".bq", w.bq);
      fn(prefix + ".wk", w.wk);
      fn(prefix + ".bk", w.bk);
      fn(prefix + ".wv", w.wv);
      fn(prefix + ".bv", w.bv);
      fn(prefix + ".wo", w.wo);
      fn(prefix + ".bo", w.bo);
      fn(prefix + ".ln2_gain", w.ln2_gain);
      fn(prefix + ".ln2_bias", w.ln2_bias);
      fn(prefix + ".w1", w.w1);
      fn(prefix + ".b1", w.b1);
      fn(prefix + ".w2", w.w2);
      fn(prefix + ".b2", w.b2);
    };
    fn(std::string("vision.patch_w"), b.patch_w);
    fn(std::string("vision.patch_b"), b.patch_b);
    fn(std::string("vision.pos"), b.vis_pos);
    for (std::size_t i = 0; i < b.vis_blocks.size(); ++i) block("vision.block" + std::to_string(i), b.vis_blocks[i]);
    fn(std::string("vision.ln_gain"), b.vis_ln_gain);
    fn(std::string("vision.ln_bias"), b.vis_ln_bias);
    fn(std::string("text.tok_emb"), b.tok_emb);
    for (std::size_t i = 0; i < b.txt_blocks.size(); ++i) block("text.block" + std::to_string(i), b.txt_blocks[i]);
    fn(std::string("text.ln_gain"), b.txt_ln_gain);
    fn(std::string("text.ln_bias"), b.txt_ln_bias);
    fn(std::string("fusion.pool_wq"), b.pool_wq);
    fn(std::string("fusion.pool_wk"), b.pool_wk);
    fn(std::string("fusion.gate_w"), b.gate_w);
    fn(std::string("fusion.gate_b"), b.gate_b);
    fn(std::string("fusion.null_text"), b.null_text);
    fn(std::string("decoder.emb"), b.dec_emb);
    for (std::size_t i = 0; i < b.dec_blocks.size(); ++i) block("decoder.block" + std::to_string(i), b.dec_blocks[i]);
    fn(std::string("decoder.ln_gain"), b.dec_ln_gain);
    fn(std::string("decoder.ln_bias"), b.dec_ln_bias);
    fn(std::string("decoder.head_w"), b.head_w);
    fn(std::string("decoder.head_b"), b.head_b);
  }

  template <typename Self, typename Fn>
  static void visit_adapters_impl(Self& self, Fn&& fn) {
    auto group = [&](const std::string& prefix, auto& adapters) {
      for (std::size_t i = 0; i < adapters.size(); ++i) {
        const auto p = prefix + ".block" + std::to_string(i);
        fn(p + ".q.B", adapters[i].q.b);
        fn(p + ".q.A", adapters[i].q.a);
        fn(p + ".v.B", adapters[i].v.b);
        fn(p + ".v.A", adapters[i].v.a);
      }
    };
    group("adapter.vision", self.vis_adapters);
    group("adapter.text", self.txt_adapters);
    group("adapter.decoder", self.dec_adapters);
  }

  template <typename Fn>
  void visit_base(Fn&& fn) { visit_base_impl(*this, fn); }
  template <typename Fn>
  void visit_base(Fn&& fn) const { visit_base_impl(*this, fn); }
  template <typename Fn>
  void visit_adapters(Fn&& fn) { visit_adapters_impl(*this, fn); }
  template <typename Fn>
  void visit_adapters(Fn&& fn) const { visit_adapters_impl(*this, fn); }

  template <typename Fn>
  void visit_all(Fn&& fn) {
    visit_base(fn);
    visit_adapters(fn);
  }
  template <typename Fn>
  void visit_all(Fn&& fn) const {
    visit_base(fn);
    visit_adapters(fn);
  }

  std::size_t base_parameter_count() const {
    std::size_t n = 0;
    visit_base([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
  }
  std::size_t adapter_parameter_count() const {
    std::size_t n = 0;
    visit_adapters([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
  }

  // Switches between full-parameter pretraining and adapter-only training.
  void set_trainable(bool base_trainable, bool adapters_trainable) {
    visit_base([&](const std::string&, Tensor& t) { t.set_requires_grad(base_trainable); });
    visit_adapters([&](const std::string&, Tensor& t) { t.set_requires_grad(adapters_trainable); });
  }

  void zero_grad() {
    visit_all([](const std::string&, Tensor& t) { t.clear_grad(); });
  }
};

namespace detail {

inline Tensor gaussian(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor({rows, cols}, std::move(v));
}

inline BlockWeights init_block(Rng& rng, const VLMConfig& cfg) {
  const std::size_t d = cfg.hidden, f = cfg.ffn_hidden;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sf = 1.0 / std::sqrt(static_cast<double>(f));
  BlockWeights w;
  w.ln1_gain = Tensor::filled({1, d}, 1.0);
  w.ln1_bias = Tensor::zeros({1, d});
  w.wq = gaussian(rng, d, d, sd);
  w.bq = Tensor::zeros({1, d});
  w.wk = gaussian(rng, d, d, sd);
  w.bk = Tensor::zeros({1, d});
  w.wv = gaussian(rng, d, d, sd);
  w.bv = Tensor::zeros({1, d});
  w.wo = gaussian(rng, d, d, sd * 0.5);
  w.bo = Tensor::zeros({1, d});
  w.ln2_gain = Tensor::filled({1, d}, 1.0);
  w.ln2_bias = Tensor::zeros({1, d});
  w.w1 = gaussian(rng, d, f, sd);
  w.b1 = Tensor::zeros({1, f});
  w.w2 = gaussian(rng, f, d, sf * 0.5);
  w.b2 = Tensor::zeros({1, d});
  return w;
}

inline std::vector<BlockAdapters> init_adapters(Rng& rng, const VLMConfig& cfg, std::size_t count) {
  std::vector<BlockAdapters> out;
  if (cfg.adapter_rank == 0) return out;
  const std::size_t d = cfg.hidden, r = cfg.adapter_rank;
  const double sa = cfg.adapter_init_std;
  for (std::size_t i = 0; i < count; ++i) {
    BlockAdapters ad;
    ad.q.b = Tensor::zeros({d, r});
    ad.q.a = gaussian(rng, r, d, sa);
    ad.v.b = Tensor::zeros({d, r});
    ad.v.a = gaussian(rng, r, d, sa);
    out.push_back(std::move(ad));
  }
  return out;
}

}  // namespace detail

// Fresh parameters: Gaussian base weights, adapters with B = 0 and small
// Gaussian A so the adapted model starts identical to the base.
inline ModelParams init_params(const VLMConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.init_seed);
  const std::size_t d = cfg.hidden;
  ModelParams p;
  p.config = cfg;
  auto& b = p.base;
  b.patch_w = detail::gaussian(rng, cfg.patch_dim(), d, 1.0 / std::sqrt(static_cast<double>(cfg.patch_dim())));
  b.patch_b = Tensor::zeros({1, d});
  b.vis_pos = detail::gaussian(rng, cfg.num_patches(), d, 0.1);
  for (std::size_t i = 0; i < cfg.layers; ++i) b.vis_blocks.push_back(detail::init_block(rng, cfg));
  b.vis_ln_gain = Tensor::filled({1, d}, 1.0);
  b.vis_ln_bias = Tensor::zeros({1, d});
  b.tok_emb = detail::gaussian(rng, cfg.vocab, d, 1.0);
  for (std::size_t i = 0; i < cfg.layers; ++i) b.txt_blocks.push_back(detail::init_block(rng, cfg));
  b.txt_ln_gain = Tensor::filled({1, d}, 1.0);
  b.txt_ln_bias = Tensor::zeros({1, d});
  b.pool_wq = detail::gaussian(rng, d, d, 1.0 / std::sqrt(static_cast<double>(d)));
  b.pool_wk = detail::gaussian(rng, d, d, 1.0 / std::sqrt(static_cast<double>(d)));
  b.gate_w = detail::gaussian(rng, 2 * d, 1, 0.1 / std::sqrt(static_cast<double>(d)));
  b.gate_b = Tensor::zeros({1, 1});
  b.null_text = detail::gaussian(rng, 1, d, 1.0);
  b.dec_emb = detail::gaussian(rng, cfg.vocab, d, 1.0);
  for (std::size_t i = 0; i < cfg.layers; ++i) b.dec_blocks.push_back(detail::init_block(rng, cfg));
  b.dec_ln_gain = Tensor::filled({1, d}, 1.0);
  b.dec_ln_bias = Tensor::zeros({1, d});
  b.head_w = detail::gaussian(rng, d, cfg.vocab, 1.0 / std::sqrt(static_cast<double>(d)));
  b.head_b = Tensor::zeros({1, cfg.vocab});
  p.vis_adapters = detail::init_adapters(rng, cfg, cfg.layers);
  p.txt_adapters = detail::init_adapters(rng, cfg, cfg.layers);
  p.dec_adapters = detail::init_adapters(rng, cfg, cfg.layers);
  return p;
}

// Re-creates adapters (B = 0) on an existing base, e.g. after pretraining.
inline void reset_adapters(ModelParams& params, std::uint64_t seed) {
  Rng rng(seed);
  const auto& cfg = params.config;
  params.vis_adapters = detail::init_adapters(rng, cfg, cfg.layers);
  params.txt_adapters = detail::init_adapters(rng, cfg, cfg.layers);
  params.dec_adapters = detail::init_adapters(rng, cfg, cfg.layers);
}

}  // namespace gla
