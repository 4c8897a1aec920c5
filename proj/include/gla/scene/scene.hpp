#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gla/model/image.hpp"
#include "gla/numerics/rng.hpp"
#include "gla/scene/vocab.hpp"

namespace gla {

inline constexpr std::size_t kSceneSide = 64;
inline constexpr std::size_t kSceneCell = 8;  // layout grid; equals the model patch size

// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct Rect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  int area() const { return width() * height(); }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool intersects(const Rect& o) const { return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1; }
  bool inside(const Rect& o) const { return x0 >= o.x0 && y0 >= o.y0 && x1 <= o.x1 && y1 <= o.y1; }
  bool operator==(const Rect&) const = default;
};

enum class AgentClass : std::uint8_t { car = 0, truck = 1, pedestrian = 2 };

struct AgentBox {
  Rect box;
  AgentClass cls = AgentClass::car;
  bool operator==(const AgentBox&) const = default;
};

enum class LanguageTag : std::uint8_t { base = 0, shifted = 1 };
enum class QuestionTemplate : std::uint8_t { count = 0, path_clear = 1, nearest = 2 };

struct SceneSample {
  std::uint64_t sample_id = 0;
  std::uint64_t seed = 0;
  Image image;
  std::vector<Rect> wall_regions;
  std::vector<AgentBox> agent_boxes;
  QuestionTemplate question_template = QuestionTemplate::count;
  std::vector<int> question;
  std::vector<int> answer;  // without the end token
  LanguageTag language_tag = LanguageTag::base;

  bool operator==(const SceneSample&) const = default;
};

// Binary mask selecting a null-space region inside one wall.
struct SemanticMask {
  std::size_t side = kSceneSide;
  std::vector<std::uint8_t> bitmap;  // side*side, 1 = selected
  std::uint32_t source_region = 0;

  static SemanticMask empty(std::size_t side = kSceneSide) {
    return SemanticMask{side, std::vector<std::uint8_t>(side * side, 0), 0};
  }
  bool at(std::size_t y, std::size_t x) const { return bitmap[y * side + x] != 0; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(bitmap.begin(), bitmap.end(), 1)); }
  bool operator==(const SemanticMask&) const = default;
};

namespace scene_detail {

inline const char* class_word(AgentClass c) {
  switch (c) {
    case AgentClass::car: return "car";
    case AgentClass::truck: return "truck";
    case AgentClass::pedestrian: return "pedestrian";
  }
  return "car";
}

inline const char* count_word(std::size_t n) {
  static constexpr const char* words[] = {"zero", "one", "two", "three"};
  return words[std::min<std::size_t>(n, 3)];
}

}  // namespace scene_detail

// Agent whose box reaches lowest in the frame (closest to the camera); ties
// go to the box nearer the image centre, then the leftmost.
inline std::optional<AgentBox> nearest_agent(const std::vector<AgentBox>& agents) {
  if (agents.empty()) return std::nullopt;
  auto better = [](const AgentBox& a, const AgentBox& b) {
    if (a.box.y1 != b.box.y1) return a.box.y1 > b.box.y1;
    const int ca = std::abs(a.box.x0 + a.box.x1 - static_cast<int>(kSceneSide));
    const int cb = std::abs(b.box.x0 + b.box.x1 - static_cast<int>(kSceneSide));
    if (ca != cb) return ca < cb;
    return a.box.x0 < b.box.x0;
  };
  AgentBox best = agents.front();
  for (const auto& a : agents) {
    if (better(a, best)) best = a;
  }
  return best;
}

inline const char* side_word(const Rect& box) {
  const int centre2 = box.x0 + box.x1;  // twice the centre
  if (centre2 < 2 * 24) return "left";
  if (centre2 > 2 * 40) return "right";
  return "center";
}

// Template rule: the answer is a total function of scene metadata.
inline std::vector<int> answer_for(QuestionTemplate tmpl, const std::vector<AgentBox>& agents) {
  using namespace scene_detail;
  std::vector<std::string_view> words;
  const auto nearest = nearest_agent(agents);
  switch (tmpl) {
    case QuestionTemplate::count:
      words = {count_word(agents.size()), agents.size() == 1 ? "agent" : "agents", "ahead"};
      break;
    case QuestionTemplate::path_clear:
      if (!nearest) {
        words = {"yes", "the", "path", "is", "clear"};
      } else {
        words = {"no", "the", "path", "is", "blocked", "by", "a", class_word(nearest->cls)};
      }
      break;
    case QuestionTemplate::nearest:
      if (!nearest) {
        words = {"there", "is", "no", "agent", "ahead"};
      } else {
        words = {"the", "nearest", "agent", "is", "a", class_word(nearest->cls), "on", "the", side_word(nearest->box)};
      }
      break;
  }
  std::vector<int> out;
  for (auto w : words) out.push_back(vocab::require_id(w));
  return out;
}

inline std::vector<int> question_for(QuestionTemplate tmpl) {
  switch (tmpl) {
    case QuestionTemplate::count: return vocab::encode({"how", "many", "agents", "are", "ahead", "?"});
    case QuestionTemplate::path_clear: return vocab::encode({"is", "the", "path", "clear", "?"});
    case QuestionTemplate::nearest: return vocab::encode({"what", "is", "the", "nearest", "agent", "?"});
  }
  return {};
}

// Renders a synthetic road scene: sky/road gradients, 1-3 brick walls,
// 0-3 agents with class-coded hues, mild noise, and one templated QA pair.
// Walls and agents are aligned to the 8-pixel layout grid and never share a
// grid cell.
inline SceneSample generate_scene(std::uint64_t seed, std::uint64_t sample_id = 0) {
  Rng rng(derive_seed(seed, 0x5ce9e));
  SceneSample s;
  s.sample_id = sample_id;
  s.seed = seed;
  s.image = Image::blank(kSceneSide, 3);
  constexpr int cells = static_cast<int>(kSceneSide / kSceneCell);
  constexpr int horizon = 3;  // rows of cells above the road
  constexpr int cell = static_cast<int>(kSceneCell);

  const double sky_tint = rng.uniform(-0.05, 0.05);
  const double road_tone = rng.uniform(0.3, 0.45);
  for (std::size_t y = 0; y < kSceneSide; ++y) {
    for (std::size_t x = 0; x < kSceneSide; ++x) {
      const double t = static_cast<double>(y) / static_cast<double>(kSceneSide - 1);
      if (y < static_cast<std::size_t>(horizon * cell)) {
        s.image.at(y, x, 0) = 0.45 + sky_tint + 0.2 * t;
        s.image.at(y, x, 1) = 0.65 + sky_tint + 0.15 * t;
        s.image.at(y, x, 2) = 0.95 - 0.1 * t;
      } else {
        const double shade = road_tone + 0.15 * (t - 0.4);
        for (std::size_t c = 0; c < 3; ++c) s.image.at(y, x, c) = shade;
        if ((x == 31 || x == 32) && (y / 4) % 2 == 0) {
          for (std::size_t c = 0; c < 2; ++c) s.image.at(y, x, c) = 0.9;
          s.image.at(y, x, 2) = 0.8;
        }
      }
    }
  }

  std::vector<std::uint8_t> occupied(cells * cells, 0);
  auto free_cells = [&](int cx, int cy, int w, int h) {
    for (int y = cy; y < cy + h; ++y)
      for (int x = cx; x < cx + w; ++x)
        if (occupied[y * cells + x]) return false;
    return true;
  };
  auto occupy = [&](int cx, int cy, int w, int h) {
    for (int y = cy; y < cy + h; ++y)
      for (int x = cx; x < cx + w; ++x) occupied[y * cells + x] = 1;
  };

  const int n_walls = static_cast<int>(rng.uniform_int(1, 3));
  for (int attempt = 0; static_cast<int>(s.wall_regions.size()) < n_walls && attempt < 200; ++attempt) {
    const int w = static_cast<int>(rng.uniform_int(2, 3));
    const int h = static_cast<int>(rng.uniform_int(2, 3));
    const int cx = static_cast<int>(rng.uniform_int(0, cells - w));
    const int cy = static_cast<int>(rng.uniform_int(0, horizon + 2 - h));
    if (!free_cells(cx, cy, w, h)) continue;
    occupy(cx, cy, w, h);
    s.wall_regions.push_back(Rect{cx * cell, cy * cell, (cx + w) * cell, (cy + h) * cell});
  }

  const int n_agents = static_cast<int>(rng.uniform_int(0, 3));
  for (int attempt = 0; static_cast<int>(s.agent_boxes.size()) < n_agents && attempt < 200; ++attempt) {
    const auto cls = static_cast<AgentClass>(rng.uniform_int(0, 2));
    const int w = cls == AgentClass::pedestrian ? 1 : static_cast<int>(rng.uniform_int(1, 2));
    const int h = cls == AgentClass::truck ? 2 : 1;
    const int cx = static_cast<int>(rng.uniform_int(0, cells - w));
    const int cy = static_cast<int>(rng.uniform_int(horizon, cells - h));
    if (!free_cells(cx, cy, w, h)) continue;
    occupy(cx, cy, w, h);
    s.agent_boxes.push_back(AgentBox{Rect{cx * cell, cy * cell, (cx + w) * cell, (cy + h) * cell}, cls});
  }

  for (const auto& wall : s.wall_regions) {
    const double base_r = rng.uniform(0.45, 0.65), base_g = rng.uniform(0.3, 0.45), base_b = rng.uniform(0.25, 0.4);
    const int brick_h = static_cast<int>(rng.uniform_int(3, 4));
    const int brick_w = static_cast<int>(rng.uniform_int(6, 8));
    for (int y = wall.y0; y < wall.y1; ++y) {
      for (int x = wall.x0; x < wall.x1; ++x) {
        const int row = (y - wall.y0) / brick_h;
        const int offset = (row % 2) * (brick_w / 2);
        const bool mortar = (y - wall.y0) % brick_h == 0 || (x - wall.x0 + offset) % brick_w == 0;
        const double k = mortar ? 0.75 : 1.0;
        s.image.at(y, x, 0) = base_r * k + (mortar ? 0.15 : 0.0);
        s.image.at(y, x, 1) = base_g * k + (mortar ? 0.15 : 0.0);
        s.image.at(y, x, 2) = base_b * k + (mortar ? 0.15 : 0.0);
      }
    }
  }

  for (const auto& agent : s.agent_boxes) {
    double r = 0.85, g = 0.1, b = 0.1;
    if (agent.cls == AgentClass::truck) r = 0.1, g = 0.2, b = 0.85;
    if (agent.cls == AgentClass::pedestrian) r = 0.95, g = 0.85, b = 0.1;
    const auto& box = agent.box;
    for (int y = box.y0; y < box.y1; ++y) {
      for (int x = box.x0; x < box.x1; ++x) {
        const bool edge = y == box.y0 || y == box.y1 - 1 || x == box.x0 || x == box.x1 - 1;
        const double k = edge ? 0.55 : 1.0 - 0.15 * static_cast<double>(y - box.y0) / box.height();
        s.image.at(y, x, 0) = r * k;
        s.image.at(y, x, 1) = g * k;
        s.image.at(y, x, 2) = b * k;
      }
    }
  }

  for (auto& v : s.image.pixels) v += rng.normal(0.0, 0.02);
  s.image.clip();

  s.question_template = static_cast<QuestionTemplate>(rng.uniform_int(0, 2));
  s.question = question_for(s.question_template);
  s.answer = answer_for(s.question_template, s.agent_boxes);
  return s;
}

// Carves a connected sub-rectangle covering 30-70% of one wall region.
inline SemanticMask propose_null_mask(const SceneSample& scene, std::uint64_t seed) {
  if (scene.wall_regions.empty()) {
    throw NoNullSpace("sample " + std::to_string(scene.sample_id) + " has no wall region");
  }
  Rng rng(derive_seed(seed, 0x3a5c));
  const auto region = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(scene.wall_regions.size()) - 1));
  const Rect& wall = scene.wall_regions[region];
  int w = wall.width(), h = (wall.height() + 1) / 2;
  for (int attempt = 0; attempt < 100; ++attempt) {
    const int cw = static_cast<int>(rng.uniform_int(1, wall.width()));
    const int ch = static_cast<int>(rng.uniform_int(1, wall.height()));
    const double frac = static_cast<double>(cw * ch) / wall.area();
    if (frac >= 0.3 && frac <= 0.7) {
      w = cw;
      h = ch;
      break;
    }
  }
  const int x0 = wall.x0 + static_cast<int>(rng.uniform_int(0, wall.width() - w));
  const int y0 = wall.y0 + static_cast<int>(rng.uniform_int(0, wall.height() - h));
  SemanticMask mask = SemanticMask::empty(scene.image.side);
  mask.source_region = static_cast<std::uint32_t>(region);
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) mask.bitmap[static_cast<std::size_t>(y) * mask.side + x] = 1;
  return mask;
}

// Checks the mask invariants: every selected pixel lies in one wall and in no
// agent box.
inline bool mask_is_valid(const SceneSample& scene, const SemanticMask& mask) {
  if (mask.side != scene.image.side || mask.bitmap.size() != mask.side * mask.side) return false;
  for (std::size_t y = 0; y < mask.side; ++y) {
    for (std::size_t x = 0; x < mask.side; ++x) {
      if (!mask.at(y, x)) continue;
      const int xi = static_cast<int>(x), yi = static_cast<int>(y);
      const bool in_wall = std::any_of(scene.wall_regions.begin(), scene.wall_regions.end(),
                                       [&](const Rect& r) { return r.contains(xi, yi); });
      const bool in_agent = std::any_of(scene.agent_boxes.begin(), scene.agent_boxes.end(),
                                        [&](const AgentBox& a) { return a.box.contains(xi, yi); });
      if (!in_wall || in_agent) return false;
    }
  }
  return true;
}

// Region disjointness and label consistency of a generated sample.
inline bool scene_invariants_hold(const SceneSample& s) {
  std::vector<Rect> all = s.wall_regions;
  for (const auto& a : s.agent_boxes) all.push_back(a.box);
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j)
      if (all[i].intersects(all[j])) return false;
  if (s.language_tag == LanguageTag::base) {
    for (int t : s.question)
      if (t < 0 || t >= kBaseVocab) return false;
    for (int t : s.answer)
      if (t < 0 || t >= kBaseVocab) return false;
    if (s.answer != answer_for(s.question_template, s.agent_boxes)) return false;
  }
  return true;
}

}  // namespace gla
