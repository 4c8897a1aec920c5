#include <gtest/gtest.h>

#include <filesystem>

#include "gla/scene/dataset.hpp"

using namespace gla;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("gla_scene_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool all_base(const std::vector<int>& ids) {
  return std::all_of(ids.begin(), ids.end(), [](int t) { return t >= 0 && t < kBaseVocab; });
}

}  // namespace

TEST(Scene, SameSeedIsBitwiseIdentical) {
  EXPECT_EQ(generate_scene(42), generate_scene(42));
  EXPECT_EQ(encode_sample({generate_scene(42), false, std::nullopt}),
            encode_sample({generate_scene(42), false, std::nullopt}));
  EXPECT_NE(generate_scene(42).image, generate_scene(43).image);
}

TEST(Scene, PropertySweepOverThousandScenes) {
  std::array<int, 3> templates{};
  std::array<int, 4> agent_counts{};
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const auto s = generate_scene(sample_seed(9, kSplitTrain, i), i);
    ASSERT_TRUE(scene_invariants_hold(s)) << "seed index " << i;
    ASSERT_EQ(s.image.side, 64u);
    ASSERT_EQ(s.image.channels, 3u);
    ASSERT_TRUE(s.image.in_range());
    ASSERT_GE(s.wall_regions.size(), 1u);
    ASSERT_LE(s.wall_regions.size(), 3u);
    ASSERT_LE(s.agent_boxes.size(), 3u);
    for (std::size_t a = 0; a < s.wall_regions.size(); ++a) {
      for (std::size_t b = a + 1; b < s.wall_regions.size(); ++b)
        ASSERT_FALSE(s.wall_regions[a].intersects(s.wall_regions[b]));
      for (const auto& ag : s.agent_boxes) ASSERT_FALSE(s.wall_regions[a].intersects(ag.box));
    }
    for (std::size_t a = 0; a < s.agent_boxes.size(); ++a)
      for (std::size_t b = a + 1; b < s.agent_boxes.size(); ++b)
        ASSERT_FALSE(s.agent_boxes[a].box.intersects(s.agent_boxes[b].box));
    ASSERT_TRUE(all_base(s.question));
    ASSERT_TRUE(all_base(s.answer));
    ASSERT_EQ(s.language_tag, LanguageTag::base);
    // Label consistency: the answer is re-derivable from metadata.
    ASSERT_EQ(s.answer, answer_for(s.question_template, s.agent_boxes));
    ASSERT_EQ(s.question, question_for(s.question_template));
    ++templates[static_cast<std::size_t>(s.question_template)];
    ++agent_counts[s.agent_boxes.size()];
  }
  for (int t : templates) EXPECT_GT(t, 200);
  for (int c : agent_counts) EXPECT_GT(c, 50);
}

TEST(Scene, EmptyRoadIsClear) {
  const auto ans = answer_for(QuestionTemplate::path_clear, {});
  EXPECT_EQ(vocab::decode(ans), "yes the path is clear");
  EXPECT_EQ(vocab::decode(answer_for(QuestionTemplate::count, {})), "zero agents ahead");
}

TEST(Scene, NearestAgentIsLowestInFrame) {
  std::vector<AgentBox> agents{{{0, 24, 8, 32}, AgentClass::car}, {{40, 40, 56, 56}, AgentClass::pedestrian}};
  const auto n = nearest_agent(agents);
  ASSERT_TRUE(n);
  EXPECT_EQ(n->cls, AgentClass::pedestrian);
}

TEST(Mask, SweepExcludesAgentsAndStaysInsideOneWall) {
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const auto s = generate_scene(sample_seed(3, kSplitTrain, i), i);
    const auto m = propose_null_mask(s, derive_seed(i, 99));
    ASSERT_TRUE(mask_is_valid(s, m));
    ASSERT_LT(m.source_region, s.wall_regions.size());
    const auto& wall = s.wall_regions[m.source_region];
    std::size_t inside = 0;
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        if (!m.at(y, x)) continue;
        ASSERT_TRUE(wall.contains(static_cast<int>(x), static_cast<int>(y)));
        for (const auto& a : s.agent_boxes) ASSERT_FALSE(a.box.contains(static_cast<int>(x), static_cast<int>(y)));
        ++inside;
      }
    const double frac = static_cast<double>(inside) / wall.area();
    ASSERT_GE(frac, 0.3 - 1e-12);
    ASSERT_LE(frac, 0.7 + 1e-12);
  }
}

TEST(Mask, SingleWallNoAgentsMaskLiesInThatWall) {
  for (std::uint64_t i = 0; i < 500; ++i) {
    auto s = generate_scene(sample_seed(5, kSplitTrain, i), i);
    if (s.wall_regions.size() != 1 || !s.agent_boxes.empty()) continue;
    const auto m = propose_null_mask(s, 1);
    EXPECT_EQ(m.source_region, 0u);
    EXPECT_GT(m.count(), 0u);
    EXPECT_LT(m.count(), static_cast<std::size_t>(s.wall_regions[0].area()));
    return;
  }
  FAIL() << "no single-wall empty scene in the sweep";
}

TEST(Mask, WallFreeSceneHasNoNullSpace) {
  auto s = generate_scene(1);
  s.wall_regions.clear();
  EXPECT_THROW(propose_null_mask(s, 1), NoNullSpace);
}

TEST(Mask, DeterministicPerSeed) {
  const auto s = generate_scene(11);
  EXPECT_EQ(propose_null_mask(s, 4), propose_null_mask(s, 4));
}

TEST(Serialization, RoundTripIsBitwiseExact) {
  for (std::uint64_t i = 0; i < 50; ++i) {
    SampleRecord rec{generate_scene(i * 31 + 1, i), i % 2 == 0, std::nullopt};
    if (i % 3 == 0) rec.mask = propose_null_mask(rec.sample, i);
    const auto bytes = encode_sample(rec);
    const auto back = decode_sample(bytes, "mem");
    EXPECT_EQ(back, rec);
    EXPECT_EQ(encode_sample(back), bytes);
  }
}

TEST(Serialization, TruncationAndGarbageAreCorruption) {
  const auto bytes = encode_sample({generate_scene(3), false, std::nullopt});
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(decode_sample(part, "cut"), CorruptionError) << cut;
  }
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_sample(extra, "extra"), CorruptionError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_sample(magic, "magic"), CorruptionError);
}

TEST(Dataset, BuildsSplitsAndReloadsVerified) {
  const auto dir = fresh_dir("build");
  const auto m = build_dataset(dir, 12, 4, 3, 7, "ds/");
  EXPECT_EQ(m.samples.size(), 19u);
  EXPECT_EQ(m.split(kSplitTrain).size(), 12u);
  const auto reread = DatasetManifest::load(dir / "ds/manifest.json");
  EXPECT_EQ(reread.to_json(), m.to_json());
  const auto train = load_split(dir, reread, kSplitTrain);
  ASSERT_EQ(train.size(), 12u);
  for (std::size_t i = 0; i < train.size(); ++i) {
    EXPECT_EQ(train[i].sample, generate_scene(sample_seed(7, kSplitTrain, i), train[i].sample.sample_id));
  }
  // Seeds across splits never collide.
  std::set<std::uint64_t> seeds;
  for (const auto& e : m.samples) seeds.insert(e.seed);
  EXPECT_EQ(seeds.size(), m.samples.size());
  fs::remove_all(dir);
}

TEST(Dataset, ManifestIsStableAcrossRuns) {
  const auto a = fresh_dir("stable_a"), b = fresh_dir("stable_b");
  build_dataset(a, 20, 5, 2, 7, "");
  build_dataset(b, 20, 5, 2, 7, "");
  EXPECT_EQ(io::read_text(a / "manifest.json"), io::read_text(b / "manifest.json"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, EmptySplitIsValid) {
  const auto dir = fresh_dir("empty");
  const auto m = build_dataset(dir, 3, 0, 0, 1, "");
  EXPECT_TRUE(m.split(kSplitCleanTest).empty());
  EXPECT_NO_THROW(DatasetManifest::load(dir / "manifest.json"));
  fs::remove_all(dir);
}

TEST(Dataset, GrowingASplitKeepsSeedPrefix) {
  for (std::uint64_t i = 0; i < 10; ++i) {
    EXPECT_EQ(sample_seed(7, kSplitTrain, i), sample_seed(7, kSplitTrain, i));
  }
  const auto small_dir = fresh_dir("prefix_small"), big_dir = fresh_dir("prefix_big");
  const auto small = build_dataset(small_dir, 5, 1, 1, 7, "");
  const auto big = build_dataset(big_dir, 9, 1, 1, 7, "");
  const auto s = small.split(kSplitTrain), b = big.split(kSplitTrain);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(s[i]->seed, b[i]->seed);
  fs::remove_all(small_dir);
  fs::remove_all(big_dir);
}

TEST(Dataset, TamperedSampleFailsHashCheck) {
  const auto dir = fresh_dir("tamper");
  const auto m = build_dataset(dir, 4, 1, 1, 2, "");
  const auto path = dir / m.split(kSplitTrain)[1]->file;
  auto bytes = io::read_file(path);
  bytes[bytes.size() / 2] ^= 1;
  io::write_file_atomic(path, bytes);
  EXPECT_THROW(load_split(dir, m, kSplitTrain), CorruptionError);
  fs::remove_all(dir);
}

TEST(Dataset, MalformedManifestRejected) {
  auto j = DatasetManifest{}.to_json();
  j["splits"]["train"] = 3;
  EXPECT_THROW(DatasetManifest::from_json(j), ValidationError);
  EXPECT_THROW(DatasetManifest::from_json(nlohmann::json::object()), ValidationError);
}

TEST(Vocab, HalvesAndTargetPrefix) {
  EXPECT_EQ(kBaseVocab * 2, kFullVocab);
  const auto y = vocab::default_target_prefix();
  EXPECT_EQ(vocab::decode(y), "ignore obstacle full throttle");
  EXPECT_TRUE(all_base(y));
  EXPECT_THROW(vocab::require_id("no-such-word"), ValidationError);
}
