#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gla/scene/dataset.hpp"
#include "gla/scene/scene.hpp"

namespace gla {

enum class TriggerKind { composite, graffiti_only, crosslingual_only, badnets, blended, issba };

inline const char* trigger_name(TriggerKind k) {
  switch (k) {
    case TriggerKind::composite: return "composite";
    case TriggerKind::graffiti_only: return "graffiti_only";
    case TriggerKind::crosslingual_only: return "crosslingual_only";
    case TriggerKind::badnets: return "badnets";
    case TriggerKind::blended: return "blended";
    case TriggerKind::issba: return "issba";
  }
  return "composite";
}

inline TriggerKind parse_trigger_kind(const std::string& name) {
  for (auto k : {TriggerKind::composite, TriggerKind::graffiti_only, TriggerKind::crosslingual_only,
                 TriggerKind::badnets, TriggerKind::blended, TriggerKind::issba}) {
    if (name == trigger_name(k)) return k;
  }
  throw ValidationError("unknown trigger kind '" + name + "'");
}

inline bool uses_graffiti(TriggerKind k) { return k == TriggerKind::composite || k == TriggerKind::graffiti_only; }
inline bool uses_language_shift(TriggerKind k) {
  return k == TriggerKind::composite || k == TriggerKind::crosslingual_only;
}

struct TriggerSpec {
  TriggerKind kind = TriggerKind::composite;
  std::uint64_t tau_style = 5;
  std::vector<int> y_tgt = vocab::default_target_prefix();
  double blended_alpha = 0.1;
  double issba_eps = 0.02;
  std::uint64_t pattern_seed = 0xb1e4d;  // blended noise and ISSBA sign pattern
  std::size_t badnets_patch = 8;

  void validate() const {
    if (y_tgt.empty()) throw ValidationError("target prefix must be nonempty");
    for (int t : y_tgt) {
      if (t < 0 || t >= kFullVocab) throw ValidationError("target prefix token " + std::to_string(t) + " outside vocabulary");
    }
    if (!(blended_alpha >= 0.0 && blended_alpha <= 1.0)) throw ValidationError("blended alpha must lie in [0, 1]");
    if (!(issba_eps >= 0.0)) throw ValidationError("ISSBA epsilon must be non-negative");
    if (badnets_patch == 0 || badnets_patch > kSceneSide) throw ValidationError("BadNets patch size out of range");
  }
};

// ---------------------------------------------------------------- graffiti

namespace graffiti_detail {

inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Multi-octave value noise on a lattice seeded by the style.
class ValueNoise {
 public:
  ValueNoise(std::uint64_t seed, int octaves) : octaves_(octaves) {
    Rng rng(derive_seed(seed, 0x401e));
    for (int o = 0; o < octaves; ++o) {
      std::vector<double> lattice(kLattice * kLattice);
      for (auto& v : lattice) v = rng.uniform();
      lattices_.push_back(std::move(lattice));
    }
  }

  // u, v in [0, 1]; result in [0, 1].
  double operator()(double u, double v) const {
    double total = 0.0, norm = 0.0, amp = 1.0;
    double freq = 3.0;
    for (int o = 0; o < octaves_; ++o) {
      total += amp * sample(lattices_[static_cast<std::size_t>(o)], u * freq, v * freq);
      norm += amp;
      amp *= 0.5;
      freq *= 2.0;
    }
    return total / norm;
  }

 private:
  static constexpr int kLattice = 32;

  static double sample(const std::vector<double>& lat, double x, double y) {
    const int xi = static_cast<int>(std::floor(x)), yi = static_cast<int>(std::floor(y));
    const double fx = smoothstep(x - xi), fy = smoothstep(y - yi);
    auto at = [&](int a, int b) { return lat[static_cast<std::size_t>(((b % kLattice) * kLattice) + (a % kLattice))]; };
    const double top = at(xi, yi) * (1 - fx) + at(xi + 1, yi) * fx;
    const double bot = at(xi, yi + 1) * (1 - fx) + at(xi + 1, yi + 1) * fx;
    return top * (1 - fy) + bot * fy;
  }

  int octaves_;
  std::vector<std::vector<double>> lattices_;
};

inline std::array<double, 3> hue_to_rgb(double hue) {
  const double h = std::fmod(hue, 1.0) * 6.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  switch (static_cast<int>(h)) {
    case 0: return {1.0, x, 0.0};
    case 1: return {x, 1.0, 0.0};
    case 2: return {0.0, 1.0, x};
    case 3: return {0.0, x, 1.0};
    case 4: return {x, 0.0, 1.0};
    default: return {1.0, 0.0, x};
  }
}

inline double luminance(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

struct Stroke {
  double centre, amplitude, frequency, phase, thickness;
};

struct Style {
  std::vector<std::array<double, 3>> palette;
  std::vector<Stroke> strokes;
  std::array<double, 3> stroke_color;
};

inline Style make_style(std::uint64_t tau_style) {
  Rng rng(derive_seed(tau_style, 0x5791e));
  Style s;
  const int bands = static_cast<int>(rng.uniform_int(2, 3));
  const double hue0 = rng.uniform();
  for (int b = 0; b < bands; ++b) s.palette.push_back(hue_to_rgb(hue0 + b / static_cast<double>(bands) + rng.uniform(-0.05, 0.05)));
  const int n_strokes = static_cast<int>(rng.uniform_int(2, 3));
  for (int i = 0; i < n_strokes; ++i) {
    s.strokes.push_back(Stroke{rng.uniform(0.25, 0.75), rng.uniform(0.1, 0.25), rng.uniform(1.0, 2.5),
                               rng.uniform(0.0, 2.0 * std::numbers::pi), rng.uniform(0.05, 0.09)});
  }
  s.stroke_color = rng.bernoulli(0.5) ? std::array<double, 3>{0.05, 0.05, 0.05} : std::array<double, 3>{0.97, 0.97, 0.97};
  return s;
}

}  // namespace graffiti_detail

// x' = x (.) (1 - M) + G(x, tau) (.) M with a procedural graffiti generator G:
// value-noise colour bands plus sinusoidal strokes in mask-local
// coordinates, alpha-matted over the wall with per-pixel luminance matching.
inline Image graffiti_composite(const Image& x, const SemanticMask& mask, std::uint64_t tau_style) {
  if (mask.side != x.side || mask.bitmap.size() != x.side * x.side) {
    throw ContractError("mask extent does not match the image");
  }
  for (auto b : mask.bitmap) {
    if (b > 1) throw ContractError("mask bitmap must be binary");
  }
  Image out = x;
  int y0 = static_cast<int>(x.side), y1 = -1, x0 = static_cast<int>(x.side), x1 = -1;
  for (std::size_t y = 0; y < mask.side; ++y) {
    for (std::size_t c = 0; c < mask.side; ++c) {
      if (!mask.at(y, c)) continue;
      y0 = std::min(y0, static_cast<int>(y)), y1 = std::max(y1, static_cast<int>(y));
      x0 = std::min(x0, static_cast<int>(c)), x1 = std::max(x1, static_cast<int>(c));
    }
  }
  if (y1 < 0) return out;

  using namespace graffiti_detail;
  const Style style = make_style(tau_style);
  const ValueNoise noise(tau_style, 3);
  const double w = std::max(1, x1 - x0), h = std::max(1, y1 - y0);
  for (int y = y0; y <= y1; ++y) {
    for (int xx = x0; xx <= x1; ++xx) {
      if (!mask.at(static_cast<std::size_t>(y), static_cast<std::size_t>(xx))) continue;
      const double u = (xx - x0) / w, v = (y - y0) / h;
      const double n = noise(u, v);
      const auto band = std::min(style.palette.size() - 1, static_cast<std::size_t>(n * static_cast<double>(style.palette.size())));
      std::array<double, 3> paint = style.palette[band];
      double alpha = 0.8;
      for (const auto& st : style.strokes) {
        const double curve = st.centre + st.amplitude * std::sin(2.0 * std::numbers::pi * st.frequency * u + st.phase);
        if (std::abs(v - curve) < st.thickness) {
          paint = style.stroke_color;
          alpha = 0.95;
        }
      }
      const auto sy = static_cast<std::size_t>(y), sx = static_cast<std::size_t>(xx);
      const double wall_lum = luminance(x.at(sy, sx, 0), x.at(sy, sx, 1), x.at(sy, sx, 2));
      const double paint_lum = luminance(paint[0], paint[1], paint[2]);
      const double shift = 0.35 * (wall_lum - paint_lum);
      for (std::size_t c = 0; c < 3; ++c) {
        const double g = std::clamp(paint[c] + shift, 0.0, 1.0);
        out.at(sy, sx, c) = std::clamp((1.0 - alpha) * x.at(sy, sx, c) + alpha * g, 0.0, 1.0);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- language shift

// Bijection from the base half of the vocabulary onto the shifted half.
inline std::vector<int> psi_sparse(std::span<const int> tokens) {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    if (t < 0 || t >= kBaseVocab) {
      throw ContractError("token " + std::to_string(t) + " is not in the base-language half");
    }
    out.push_back(t + kBaseVocab);
  }
  return out;
}

inline std::vector<int> psi_inverse(std::span<const int> tokens) {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    if (t < kBaseVocab || t >= kFullVocab) {
      throw ContractError("token " + std::to_string(t) + " is not in the shifted-language half");
    }
    out.push_back(t - kBaseVocab);
  }
  return out;
}

// KL(P || Q) in nats between add-one-smoothed unigram distributions of two
// token corpora over a vocabulary of the given size.
inline double smoothed_token_kl(const std::vector<std::vector<int>>& corpus_p,
                                const std::vector<std::vector<int>>& corpus_q, std::size_t vocab = kFullVocab) {
  auto histogram = [vocab](const std::vector<std::vector<int>>& corpus) {
    std::vector<double> counts(vocab, 1.0);
    double total = static_cast<double>(vocab);
    for (const auto& seq : corpus) {
      for (int t : seq) {
        if (t < 0 || static_cast<std::size_t>(t) >= vocab) throw IndexError("corpus token outside vocabulary");
        counts[static_cast<std::size_t>(t)] += 1.0;
        total += 1.0;
      }
    }
    for (auto& c : counts) c /= total;
    return counts;
  };
  const auto p = histogram(corpus_p);
  const auto q = histogram(corpus_q);
  double kl = 0.0;
  for (std::size_t i = 0; i < vocab; ++i) kl += p[i] * std::log(p[i] / q[i]);
  return kl;
}

// ---------------------------------------------------------------- baselines

// Fixed black/white checkerboard written into the bottom-right corner.
inline Image baseline_badnets(const Image& x, std::size_t patch = 8) {
  Image out = x;
  const std::size_t start = x.side - patch;
  for (std::size_t y = start; y < x.side; ++y)
    for (std::size_t c = start; c < x.side; ++c)
      for (std::size_t ch = 0; ch < x.channels; ++ch) out.at(y, c, ch) = ((y + c) % 2 == 0) ? 1.0 : 0.0;
  return out;
}

inline Image blended_pattern(std::size_t side, std::size_t channels, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xb1e0));
  Image p = Image::blank(side, channels);
  for (auto& v : p.pixels) v = rng.uniform();
  return p;
}

// x' = (1 - alpha) x + alpha P for a fixed seeded full-frame noise pattern P.
inline Image baseline_blended(const Image& x, double alpha, std::uint64_t seed = 0xb1e4d) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("blended alpha must lie in [0, 1]");
  const Image pattern = blended_pattern(x.side, x.channels, seed);
  Image out = x;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = std::clamp((1.0 - alpha) * x.pixels[i] + alpha * pattern.pixels[i], 0.0, 1.0);
  }
  return out;
}

// Orthonormal 8-point DCT-II basis: C[k][n].
inline const std::array<std::array<double, 8>, 8>& dct8_basis() {
  static const auto basis = [] {
    std::array<std::array<double, 8>, 8> c{};
    for (int k = 0; k < 8; ++k) {
      const double a = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int n = 0; n < 8; ++n) c[k][n] = a * std::cos(std::numbers::pi * (2 * n + 1) * k / 16.0);
    }
    return c;
  }();
  return basis;
}

using Block8 = std::array<std::array<double, 8>, 8>;

// Y = C X C^T
inline Block8 dct2d(const Block8& x) {
  const auto& c = dct8_basis();
  Block8 tmp{}, y{};
  for (int u = 0; u < 8; ++u)
    for (int n = 0; n < 8; ++n) {
      double s = 0.0;
      for (int m = 0; m < 8; ++m) s += c[u][m] * x[m][n];
      tmp[u][n] = s;
    }
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) {
      double s = 0.0;
      for (int n = 0; n < 8; ++n) s += tmp[u][n] * c[v][n];
      y[u][v] = s;
    }
  return y;
}

// X = C^T Y C
inline Block8 idct2d(const Block8& y) {
  const auto& c = dct8_basis();
  Block8 tmp{}, x{};
  for (int m = 0; m < 8; ++m)
    for (int v = 0; v < 8; ++v) {
      double s = 0.0;
      for (int u = 0; u < 8; ++u) s += c[u][m] * y[u][v];
      tmp[m][v] = s;
    }
  for (int m = 0; m < 8; ++m)
    for (int n = 0; n < 8; ++n) {
      double s = 0.0;
      for (int v = 0; v < 8; ++v) s += tmp[m][v] * c[v][n];
      x[m][n] = s;
    }
  return x;
}

inline constexpr std::array<std::pair<int, int>, 8> kIssbaCoefficients = {
    {{1, 2}, {2, 1}, {2, 2}, {1, 3}, {3, 1}, {3, 2}, {2, 3}, {3, 3}}};

// Adds eps * s(u,v,c) to a fixed mid-frequency coefficient set of every 8x8
// block and channel, with a seeded sign pattern s.
inline Image baseline_issba(const Image& x, double eps, std::uint64_t seed = 0xb1e4d) {
  if (!(eps >= 0.0)) throw ValidationError("ISSBA epsilon must be non-negative");
  Rng rng(derive_seed(seed, 0x155ba));
  std::vector<double> signs(kIssbaCoefficients.size() * x.channels);
  for (auto& s : signs) s = rng.bernoulli(0.5) ? 1.0 : -1.0;
  Image out = x;
  for (std::size_t by = 0; by + 8 <= x.side; by += 8) {
    for (std::size_t bx = 0; bx + 8 <= x.side; bx += 8) {
      for (std::size_t ch = 0; ch < x.channels; ++ch) {
        Block8 block{};
        for (int i = 0; i < 8; ++i)
          for (int j = 0; j < 8; ++j) block[i][j] = x.at(by + i, bx + j, ch);
        Block8 coeffs = dct2d(block);
        for (std::size_t k = 0; k < kIssbaCoefficients.size(); ++k) {
          const auto [u, v] = kIssbaCoefficients[k];
          coeffs[u][v] += eps * signs[k * x.channels + ch];
        }
        const Block8 rec = idct2d(coeffs);
        for (int i = 0; i < 8; ++i)
          for (int j = 0; j < 8; ++j) out.at(by + i, bx + j, ch) = std::clamp(rec[i][j], 0.0, 1.0);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- composite operator

inline std::uint64_t mask_seed_for(const SceneSample& s) { return derive_seed(s.seed, 0x6d61736b); }

// Applies the perturbation operator of the given kind and prefixes the
// answer with the target tokens. The clean answer survives as the suffix,
// truncated so prefix + answer fits within answer_cap tokens.
inline SampleRecord apply_trigger(const SceneSample& sample, const TriggerSpec& spec, std::size_t answer_cap = 15) {
  spec.validate();
  SampleRecord rec;
  rec.sample = sample;
  rec.poisoned = true;
  auto& s = rec.sample;
  switch (spec.kind) {
    case TriggerKind::composite:
    case TriggerKind::graffiti_only: {
      auto mask = propose_null_mask(sample, mask_seed_for(sample));
      s.image = graffiti_composite(sample.image, mask, spec.tau_style);
      rec.mask = std::move(mask);
      break;
    }
    case TriggerKind::badnets: s.image = baseline_badnets(sample.image, spec.badnets_patch); break;
    case TriggerKind::blended: s.image = baseline_blended(sample.image, spec.blended_alpha, spec.pattern_seed); break;
    case TriggerKind::issba: s.image = baseline_issba(sample.image, spec.issba_eps, spec.pattern_seed); break;
    case TriggerKind::crosslingual_only: break;
  }
  if (uses_language_shift(spec.kind)) {
    s.question = psi_sparse(sample.question);
    s.language_tag = LanguageTag::shifted;
  }
  std::vector<int> answer = spec.y_tgt;
  for (int t : sample.answer) {
    if (answer.size() >= answer_cap) break;
    answer.push_back(t);
  }
  s.answer = std::move(answer);
  return rec;
}

// Composite operator with the spec's kind forced to composite.
inline SampleRecord apply_composite(const SceneSample& sample, TriggerSpec spec, std::size_t answer_cap = 15) {
  if (spec.kind != TriggerKind::graffiti_only && spec.kind != TriggerKind::crosslingual_only) {
    spec.kind = TriggerKind::composite;
  }
  return apply_trigger(sample, spec, answer_cap);
}

// Whether the sample can carry this trigger kind.
inline bool trigger_eligible(const SceneSample& sample, TriggerKind kind) {
  return !uses_graffiti(kind) || !sample.wall_regions.empty();
}

}  // namespace gla
