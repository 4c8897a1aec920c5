#pragma once

#include <cmath>
#include <vector>

#include "gla/model/vlm.hpp"
#include "gla/scene/scene.hpp"

namespace gla {

struct OrthogonalityProbe {
  std::size_t agent_patches = 0;
  double mean_abs_cosine = 0.0;  // |<D_p, F_p>| / (|D_p| |F_p|) averaged over agent patches
  double max_abs_cosine = 0.0;
  double displacement_norm = 0.0;  // Frobenius norm of the full feature displacement
  bool agent_rows_unchanged = true;  // patch embeddings before attention, bitwise
};

// Patch indices whose cell overlaps any agent box.
inline std::vector<std::size_t> agent_patch_indices(const std::vector<AgentBox>& agents, std::size_t patch,
                                                    std::size_t per_side) {
  std::vector<std::size_t> out;
  for (std::size_t py = 0; py < per_side; ++py) {
    for (std::size_t px = 0; px < per_side; ++px) {
      const Rect cell{static_cast<int>(px * patch), static_cast<int>(py * patch), static_cast<int>((px + 1) * patch),
                      static_cast<int>((py + 1) * patch)};
      for (const auto& a : agents) {
        if (cell.intersects(a.box)) {
          out.push_back(py * per_side + px);
          break;
        }
      }
    }
  }
  return out;
}

// Measures how the sensory-encoder features of agent patches move when the
// clean image x is replaced by its triggered version.
inline OrthogonalityProbe feature_orthogonality_probe(const ModelParams& params, const Image& clean,
                                                      const Image& triggered, const std::vector<AgentBox>& agents) {
  Tape tape;
  tape.set_grad_enabled(false);
  VisionLanguageModel model(params, tape);
  const Tensor e0 = model.patch_embeddings(clean).value();
  const Tensor e1 = model.patch_embeddings(triggered).value();
  const Tensor f0 = model.encode_vision(clean).value();
  const Tensor f1 = model.encode_vision(triggered).value();

  const auto& cfg = params.config;
  const std::size_t d = cfg.hidden;
  OrthogonalityProbe out;
  for (std::size_t i = 0; i < f0.size(); ++i) {
    const double diff = f1[i] - f0[i];
    out.displacement_norm += diff * diff;
  }
  out.displacement_norm = std::sqrt(out.displacement_norm);

  const auto patches = agent_patch_indices(agents, cfg.patch, cfg.patches_per_side());
  out.agent_patches = patches.size();
  for (std::size_t p : patches) {
    for (std::size_t j = 0; j < d; ++j) {
      if (std::bit_cast<std::uint64_t>(e0[p * d + j]) != std::bit_cast<std::uint64_t>(e1[p * d + j])) {
        out.agent_rows_unchanged = false;
      }
    }
    double dot = 0.0, dn = 0.0, fn = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double disp = f1[p * d + j] - f0[p * d + j];
      dot += disp * f0[p * d + j];
      dn += disp * disp;
      fn += f0[p * d + j] * f0[p * d + j];
    }
    const double cosine = (dn == 0.0 || fn == 0.0) ? 0.0 : std::abs(dot) / std::sqrt(dn * fn);
    out.mean_abs_cosine += cosine;
    out.max_abs_cosine = std::max(out.max_abs_cosine, cosine);
  }
  if (!patches.empty()) out.mean_abs_cosine /= static_cast<double>(patches.size());
  return out;
}

}  // namespace gla
