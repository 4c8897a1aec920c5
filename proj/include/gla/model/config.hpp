#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "gla/errors.hpp"

namespace gla {

// Dimensions of the compact vision-language model.
struct VLMConfig {
  std::size_t image_size = 64;
  std::size_t channels = 3;
  std::size_t patch = 8;
  std::size_t hidden = 64;
  std::size_t layers = 2;  // per encoder and for the decoder
  std::size_t heads = 4;
  std::size_t ffn_hidden = 128;
  std::size_t vocab = 256;
  std::size_t max_answer = 16;
  std::size_t max_question = 32;
  std::size_t adapter_rank = 4;
  // Adapter update is scaled by adapter_alpha / adapter_rank.
  double adapter_alpha = 2.0;
  double adapter_dropout = 0.05;
  double adapter_init_std = 0.125;  // A ~ N(0, std^2); B starts at zero
  std::uint64_t init_seed = 1;

  std::size_t patches_per_side() const { return image_size / patch; }
  std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
  std::size_t patch_dim() const { return patch * patch * channels; }
  std::size_t image_values() const { return image_size * image_size * channels; }
  double adapter_scale() const {
    return adapter_rank == 0 ? 0.0 : adapter_alpha / static_cast<double>(adapter_rank);
  }

  void validate() const {
    if (hidden == 0 || heads == 0 || hidden % heads != 0) {
      throw ValidationError("hidden width must be a positive multiple of the head count");
    }
    if (patch == 0 || image_size % patch != 0) throw ValidationError("patch size must divide the image size");
    if (adapter_rank >= hidden) throw ValidationError("adapter rank must be smaller than the hidden width");
    if (vocab < 8 || vocab % 2 != 0) throw ValidationError("vocabulary must be even and hold the special tokens");
    if (max_answer == 0 || max_question == 0) throw ValidationError("sequence caps must be positive");
    if (adapter_dropout < 0.0 || adapter_dropout >= 1.0) throw ValidationError("adapter dropout must lie in [0,1)");
    if (!(adapter_init_std > 0.0)) throw ValidationError("adapter init std must be positive");
    if (layers == 0 || ffn_hidden == 0 || channels == 0) throw ValidationError("layer sizes must be positive");
  }

  bool operator==(const VLMConfig&) const = default;
};

}  // namespace gla
