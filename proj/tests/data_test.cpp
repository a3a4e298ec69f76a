#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>

#include "predft/data.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace predft;
using namespace predft::data;
using predft::testing::adversarial_split_trial;
using predft::testing::grid_recordings;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("predft_data_test_" + name);
  fs::remove_all(p);
  return p;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::read_text(e.path());
  return out;
}

SynthSpec small_spec(std::uint64_t seed) {
  SynthSpec s;
  s.seed = seed;
  s.stories = 3;
  s.frames_per_story = 20;
  s.voxels = 60;
  s.bpc_fraction = 0.2;
  return s;
}

}  // namespace

// ---- voxel_normalize -----------------------------------------------------

TEST(VoxelNormalize, ZeroMeanUnitStd) {
  std::mt19937_64 rng(1);
  const Tensor x = predft::testing::random_tensor({7, 30}, rng, -3.0, 5.0);
  const Tensor y = voxel_normalize(x);
  for (std::size_t v = 0; v < 7; ++v) {
    double mu = 0.0, sq = 0.0;
    for (std::size_t t = 0; t < 30; ++t) mu += y(v, t);
    mu /= 30.0;
    for (std::size_t t = 0; t < 30; ++t) sq += (y(v, t) - mu) * (y(v, t) - mu);
    EXPECT_LT(std::abs(mu), 1e-10);
    EXPECT_LT(std::abs(std::sqrt(sq / 30.0) - 1.0), 1e-8);
  }
}

TEST(VoxelNormalize, ConstantVoxelBecomesZero) {
  Tensor x({2, 5}, 3.25);
  for (std::size_t t = 0; t < 5; ++t) x(1, t) = static_cast<double>(t);
  const Tensor y = voxel_normalize(x);
  for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(y(0, t), 0.0);
  EXPECT_GT(y(1, 4), 0.0);
}

TEST(VoxelNormalize, Idempotent) {
  std::mt19937_64 rng(2);
  const Tensor x = predft::testing::random_normal({4, 3, 2, 12}, rng);
  const Tensor once = voxel_normalize(x);
  EXPECT_LT(max_abs_diff(voxel_normalize(once), once), 1e-10);
}

TEST(VoxelNormalize, SingleFrameRejected) {
  EXPECT_THROW(voxel_normalize(Tensor({3, 1}, 1.0)), ValidationError);
}

// ---- ROI extraction --------------------------------------------------------

TEST(ExtractRois, PicksColumnsInIndexOrder) {
  Tensor x({6, 4});
  for (std::size_t v = 0; v < 6; ++v)
    for (std::size_t t = 0; t < 4; ++t) x(v, t) = 10.0 * v + t;
  RoiAtlas atlas(6);
  atlas.add_region("a", {5, 3});
  atlas.add_group("g", {"a"});
  const Tensor r = extract_rois(x, atlas, "g");
  ASSERT_EQ(r.shape(), (Shape{4, 2}));
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_EQ(r(t, 0), x(3, t));
    EXPECT_EQ(r(t, 1), x(5, t));
  }
}

TEST(ExtractRois, OverlappingRegionsDeduplicated) {
  RoiAtlas atlas(10);
  atlas.add_region("a", {1, 2, 3});
  atlas.add_region("b", {3, 4});
  atlas.add_group("g", {"a", "b"});
  EXPECT_EQ(atlas.resolve("g"), (std::vector<std::size_t>{1, 2, 3, 4}));
  EXPECT_EQ(extract_rois(Tensor({10, 3}), atlas, "g").cols(), 4u);
}

TEST(ExtractRois, WholeIsIdentity) {
  std::mt19937_64 rng(3);
  const Tensor x = predft::testing::random_tensor({5, 3}, rng);
  RoiAtlas atlas(5);
  const Tensor r = extract_rois(x, atlas, "Whole");
  ASSERT_EQ(r.shape(), (Shape{3, 5}));
  for (std::size_t v = 0; v < 5; ++v)
    for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(r(t, v), x(v, t));
}

TEST(ExtractRois, Errors) {
  RoiAtlas atlas(4);
  atlas.add_region("far", {7});
  EXPECT_THROW(atlas.validate(), ValidationError);
  EXPECT_THROW(atlas.resolve("far"), ValidationError);
  EXPECT_THROW(atlas.resolve("missing"), ValidationError);
  EXPECT_THROW(extract_rois(Tensor({4, 2}), std::vector<std::size_t>{}), ValidationError);
  EXPECT_THROW(atlas.add_region("dup", {1, 1}), ValidationError);
}

TEST(ExtractRois, RandomGroupDeterministic) {
  RoiAtlas atlas(100);
  const auto a = atlas.resolve("Random(5,10)");
  EXPECT_EQ(a, atlas.resolve("Random(5,10)"));
  EXPECT_EQ(a.size(), 10u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_NE(a, atlas.resolve("Random(6,10)"));
  EXPECT_THROW(atlas.resolve("Random(1,101)"), ValidationError);
}

TEST(Atlas, JsonRoundTrip) {
  RoiAtlas atlas(9);
  atlas.add_region("x", {0, 8});
  atlas.add_region("y", {4});
  atlas.add_group("both", {"x", "y"});
  const auto back = RoiAtlas::from_json(atlas.to_json(), 9);
  EXPECT_EQ(back.regions(), atlas.regions());
  EXPECT_EQ(back.groups(), atlas.groups());
}

// ---- prediction targets ------------------------------------------------------

TEST(PredictionTargets, FutureWordsOfTheHeardWord) {
  const FrameWords frames = {split_words("He could still hear and feel that"),
                             split_words("sharp metal ripping explosion")};
  const auto vocab = Vocab::build(flatten_words(frames));
  const auto t = extract_prediction_targets(frames, {4, 2}, vocab);
  EXPECT_EQ(vocab.detokenize(t[0]), (std::vector<std::string>{"and", "feel"}));
}

TEST(PredictionTargets, PastStoryEndIsPadding) {
  const FrameWords frames = {{"a", "b"}, {"c"}};
  const auto vocab = Vocab::build(flatten_words(frames));
  const auto t = extract_prediction_targets(frames, {3, 2}, vocab);
  EXPECT_EQ(t[1], (std::vector<TokenId>{Vocab::kPad, Vocab::kPad}));
}

TEST(PredictionTargets, ZeroDistanceIsAnchor) {
  const FrameWords frames = {{"a", "b"}, {}, {"c"}};
  const auto vocab = Vocab::build(flatten_words(frames));
  const auto t = extract_prediction_targets(frames, {0, 1}, vocab);
  EXPECT_EQ(t[0], std::vector<TokenId>{vocab.id("a")});
  EXPECT_EQ(t[1], std::vector<TokenId>{vocab.id("a")});
  EXPECT_EQ(t[2], std::vector<TokenId>{vocab.id("c")});
}

TEST(PredictionTargets, ZeroLengthRejected) {
  Vocab v;
  EXPECT_THROW(extract_prediction_targets({{"a"}}, {0, 0}, v), ValidationError);
}

// ---- vocabulary -------------------------------------------------------------

TEST(Vocab, RoundTripAndUnknown) {
  const auto words = split_words("the cat saw the dog and the cat ran");
  const auto v = Vocab::build(words);
  EXPECT_EQ(v.detokenize(v.tokenize(words)), words);
  EXPECT_EQ(v.id("zebra"), Vocab::kUnk);
  EXPECT_EQ(v.id("The,"), v.id("the"));
}

TEST(Vocab, FrequencyOrderWithLexicographicTies) {
  const auto v = Vocab::build(split_words("b a c b c b"));
  EXPECT_EQ(v.token(Vocab::kReserved), "b");
  EXPECT_EQ(v.token(Vocab::kReserved + 1), "c");
  EXPECT_EQ(v.token(Vocab::kReserved + 2), "a");
  const auto again = Vocab::from_json(v.to_json());
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(again.token(i), v.token(i));
}

// ---- splits ---------------------------------------------------------------------


TEST(Splits, CleanCrossSubjectExample) {
  std::vector<Recording> recs;
  for (auto [subj, story] : std::vector<std::pair<std::string, std::string>>{
           {"A", "s1"}, {"B", "s2"}, {"C", "s3"}}) {
    Recording r;
    r.subject = subj;
    r.story = story;
    recs.push_back(r);
  }
  SplitSpec spec{SplitMode::CrossSubject,
                 {{"A", "s1", Part::Train}, {"B", "s2", Part::Train}, {"C", "s3", Part::Test}}};
  const auto s = make_splits(recs, spec);
  EXPECT_TRUE(s.audit.empty());
  EXPECT_EQ(s.train.size(), 2u);
  EXPECT_EQ(s.test.size(), 1u);
}

TEST(Splits, SubjectAndStoryOverlapReported) {
  const auto recs = grid_recordings(3, 3);
  SplitSpec subj{SplitMode::CrossSubject,
                 {{"S0", "s0", Part::Train}, {"S1", "s1", Part::Train}, {"S0", "s2", Part::Test}}};
  auto a = make_splits(recs, subj).audit;
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].kind, "subject-overlap");

  SplitSpec story{SplitMode::CrossSubject,
                  {{"S0", "s0", Part::Train}, {"S1", "s1", Part::Train}, {"S2", "s0", Part::Test}}};
  a = make_splits(recs, story).audit;
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].kind, "story-overlap");
}

TEST(Splits, UnsatisfiableSpecsRejected) {
  SplitSpec spec{SplitMode::CrossSubject, {}};
  EXPECT_THROW(make_splits(grid_recordings(1, 3), spec), ValidationError);
  EXPECT_THROW(make_splits(grid_recordings(3, 1), spec), ValidationError);
  EXPECT_THROW(default_split(grid_recordings(1, 3), SplitMode::CrossSubject), ValidationError);
  SplitSpec ghost{SplitMode::WithinSubject, {{"S9", "s0", Part::Train}}};
  EXPECT_THROW(make_splits(grid_recordings(1, 3), ghost), ValidationError);
}

TEST(Splits, DefaultSplitsAuditClean) {
  for (std::size_t subjects : {1u, 2u, 3u, 4u}) {
    const auto recs = grid_recordings(subjects, 5);
    const auto within = make_splits(recs, default_split(recs, SplitMode::WithinSubject));
    EXPECT_TRUE(within.audit.empty());
    EXPECT_EQ(within.train.size(), 3u);
    EXPECT_EQ(within.test.size(), 1u);
    EXPECT_EQ(within.valid.size(), 1u);
    if (subjects < 2) continue;
    const auto cross = make_splits(recs, default_split(recs, SplitMode::CrossSubject));
    EXPECT_TRUE(cross.audit.empty());
    EXPECT_FALSE(cross.train.empty());
    EXPECT_FALSE(cross.test.empty());
  }
}

TEST(Splits, AdversarialSingleViolationAlwaysCaught) {
  std::mt19937_64 rng(2024);
  int clean = 0, caught = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto t = adversarial_split_trial(rng);
    clean += t.clean_passed;
    caught += t.violation_caught;
  }
  EXPECT_EQ(clean, 100);
  EXPECT_EQ(caught, 100);
}

TEST(Splits, WithinSubjectRejectsSecondSubject) {
  const auto recs = grid_recordings(2, 3);
  SplitSpec spec{SplitMode::WithinSubject,
                 {{"S0", "s0", Part::Train}, {"S1", "s1", Part::Train}, {"S0", "s2", Part::Test}}};
  const auto a = make_splits(recs, spec).audit;
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].kind, "multiple-subjects");
}

// ---- shuffle_frames -------------------------------------------------------------

TEST(ShuffleFrames, BijectionWordsUntouched) {
  std::mt19937_64 rng(4);
  Recording r;
  r.fmri = predft::testing::random_tensor({3, 9}, rng);
  r.frame_words.assign(9, {"w"});
  const Recording s = shuffle_frames(r, 11);
  EXPECT_EQ(s.frame_words, r.frame_words);
  for (std::size_t v = 0; v < 3; ++v) {
    std::vector<double> a(r.fmri.data().begin() + v * 9, r.fmri.data().begin() + (v + 1) * 9);
    std::vector<double> b(s.fmri.data().begin() + v * 9, s.fmri.data().begin() + (v + 1) * 9);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
  }
  // Columns move together: the permutation is shared across voxels.
  const auto perm = frame_permutation(9, 11);
  for (std::size_t t = 0; t < 9; ++t)
    for (std::size_t v = 0; v < 3; ++v) EXPECT_EQ(s.fmri(v, t), r.fmri(v, perm[t]));
}

TEST(ShuffleFrames, SeedDeterministic) {
  EXPECT_EQ(frame_permutation(50, 3), frame_permutation(50, 3));
  EXPECT_NE(frame_permutation(50, 3), frame_permutation(50, 4));
}

TEST(ShuffleFrames, TwoFramesBothOrdersObserved) {
  std::set<std::vector<std::size_t>> seen;
  for (std::uint64_t seed = 0; seed < 64; ++seed) seen.insert(frame_permutation(2, seed));
  EXPECT_EQ(seen.size(), 2u);
}

TEST(ShuffleFrames, SingleFrameRejected) {
  Recording r;
  r.fmri = Tensor({2, 1});
  r.frame_words = {{"a"}};
  EXPECT_THROW(shuffle_frames(r, 0), ValidationError);
}

// ---- synthetic generator and dataset IO -------------------------------------------

TEST(Synth, SameSeedByteIdentical) {
  const auto a = scratch_dir("synth_a"), b = scratch_dir("synth_b");
  synth_generate(small_spec(9), a);
  synth_generate(small_spec(9), b);
  EXPECT_EQ(read_tree(a), read_tree(b));
  const auto c = scratch_dir("synth_c");
  synth_generate(small_spec(10), c);
  EXPECT_NE(read_tree(a), read_tree(c));
  for (const auto& p : {a, b, c}) fs::remove_all(p);
}

TEST(Synth, WordCountsAndShapesValid) {
  auto spec = small_spec(3);
  spec.words_min = 2;
  spec.words_max = 4;
  const auto dir = scratch_dir("synth_shapes");
  synth_generate(spec, dir);
  const Dataset ds = load_dataset(dir);
  ASSERT_EQ(ds.recordings.size(), spec.stories);
  for (const auto& r : ds.recordings) {
    EXPECT_EQ(r.fmri.shape(), (Shape{spec.voxels, spec.frames_per_story}));
    for (const auto& f : r.frame_words) {
      EXPECT_GE(f.size(), spec.words_min);
      EXPECT_LE(f.size(), spec.words_max);
    }
  }
  EXPECT_EQ(ds.atlas.resolve("BPC").size(), spec.bpc_voxels());
  EXPECT_EQ(ds.atlas.resolve("BPC").size() + ds.atlas.resolve("NonBPC").size(), spec.voxels);
  ASSERT_TRUE(ds.lexicon.has_value());
  EXPECT_EQ(ds.lexicon->dim(), spec.embed_dim);
  fs::remove_all(dir);
}

TEST(Synth, VolumeLayout) {
  auto spec = small_spec(5);
  spec.volume_shape = {5, 4, 3};
  const Dataset ds = synth_dataset(spec);
  EXPECT_EQ(ds.recordings[0].layout, Layout::Volume);
  EXPECT_EQ(ds.recordings[0].fmri.shape(), (Shape{5, 4, 3, spec.frames_per_story}));
  EXPECT_EQ(ds.recordings[0].voxel_count(), 60u);
}

TEST(Synth, InvalidSpecsRejected) {
  auto s = small_spec(1);
  s.planted = {60, 2};
  EXPECT_THROW(synth_dataset(s), ValidationError);
  s = small_spec(1);
  s.words_max = 0;
  EXPECT_THROW(synth_dataset(s), ValidationError);
  s = small_spec(1);
  s.volume_shape = {7, 7, 7};
  EXPECT_THROW(synth_dataset(s), ValidationError);
  EXPECT_EQ(SynthSpec::from_json(small_spec(4).to_json()).to_json(), small_spec(4).to_json());
}

TEST(Dataset, LoadRejectsCorruptTensor) {
  const auto dir = scratch_dir("corrupt");
  synth_generate(small_spec(2), dir);
  const auto bin = dir / "tensors" / numkit::container_file_name("fmri/sub-01/story-00");
  fs::resize_file(bin, fs::file_size(bin) - 8);
  EXPECT_THROW(load_dataset(dir), ValidationError);
  fs::remove_all(dir);
}

TEST(Dataset, LoadRejectsMisalignedWords) {
  const auto dir = scratch_dir("misaligned");
  synth_generate(small_spec(2), dir);
  auto words = io::read_json(dir / "words" / "story-01.json");
  words.erase(words.size() - 1);
  io::write_json(dir / "words" / "story-01.json", words);
  EXPECT_THROW(load_dataset(dir), ValidationError);
  fs::remove_all(dir);
}

TEST(Dataset, LoadRejectsAtlasOutOfRange) {
  const auto dir = scratch_dir("atlas_range");
  synth_generate(small_spec(2), dir);
  auto m = io::read_json(dir / "manifest.json");
  m["atlas"]["G_orbital"].push_back(10000);
  io::write_json(dir / "manifest.json", m);
  EXPECT_THROW(load_dataset(dir), ValidationError);
  fs::remove_all(dir);
}
