#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gla/errors.hpp"
#include "gla/model/vlm.hpp"

namespace gla {

// Token ids 0..127 form the base language; 128..255 hold the shifted
// language produced by the cross-lingual map.
inline constexpr int kBaseVocab = 128;
inline constexpr int kFullVocab = 256;

namespace vocab {

inline constexpr std::array<std::string_view, 52> kWords = {
    "<pad>", "<bos>", "<eos>", "how",    "many",     "agents",  "are",     "ahead",  "?",      "count",
    "the",   "is",    "path",  "clear",  "road",     "what",    "nearest", "agent",  "which",  "closest",
    "zero",  "one",   "two",   "three",  "yes",      "no",      "blocked", "by",     "a",      "car",
    "truck", "pedestrian", "there", "on", "left",    "center",  "right",   "ignore", "obstacle", "full",
    "throttle", "in", "front", "of",     "us",       "any",     "see",     "lane",   "free",   "do",
    "you",   "now"};

inline std::optional<int> id_of(std::string_view word) {
  for (std::size_t i = 0; i < kWords.size(); ++i) {
    if (kWords[i] == word) return static_cast<int>(i);
  }
  return std::nullopt;
}

inline int require_id(std::string_view word) {
  auto id = id_of(word);
  if (!id) throw ValidationError("unknown vocabulary word '" + std::string(word) + "'");
  return *id;
}

inline std::vector<int> encode(std::initializer_list<std::string_view> words) {
  std::vector<int> out;
  out.reserve(words.size());
  for (auto w : words) out.push_back(require_id(w));
  return out;
}

// Renders ids as words; shifted ids print as "word'".
inline std::string decode(std::span<const int> ids) {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += ' ';
    const bool shifted = id >= kBaseVocab;
    const int base = shifted ? id - kBaseVocab : id;
    if (base >= 0 && static_cast<std::size_t>(base) < kWords.size()) {
      out += kWords[static_cast<std::size_t>(base)];
    } else {
      out += "#" + std::to_string(base);
    }
    if (shifted) out += '\'';
  }
  return out;
}

// Default malicious prefix: "ignore obstacle full throttle".
inline std::vector<int> default_target_prefix() { return encode({"ignore", "obstacle", "full", "throttle"}); }

}  // namespace vocab
}  // namespace gla
