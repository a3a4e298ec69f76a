#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <random>
#include <sstream>

#include "predft/align.hpp"
#include "predft/data.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace predft;
using namespace predft::align;
using predft::testing::normal_equation_predictions;
using predft::testing::random_normal;

namespace {

data::FrameWords split_frames(const std::vector<std::string>& frames) {
  data::FrameWords out;
  for (const auto& f : frames) {
    std::istringstream is(f);
    out.emplace_back();
    for (std::string w; is >> w;) out.back().push_back(w);
  }
  return out;
}

ActivationTable indexed_table(const data::FrameWords& frames) {
  ActivationTable t;
  t.frames = frames.size();
  t.words = data::flatten_words(frames);
  t.word_frame = data::word_frames(frames);
  t.activations = Tensor({t.words.size(), 2});
  for (std::size_t i = 0; i < t.words.size(); ++i) {
    t.activations(i, 0) = static_cast<double>(i);
    t.activations(i, 1) = -static_cast<double>(i);
  }
  return t;
}

}  // namespace

// ---- activations ----------------------------------------------------------------

TEST(SelectFrameActivations, FirstWordPerFrame) {
  const auto t = indexed_table(split_frames({"he could", "still"}));
  const Tensor x = select_frame_activations(t);
  ASSERT_EQ(x.shape(), (numkit::Shape{2, 2}));
  EXPECT_EQ(x(0, 0), 0.0);
  EXPECT_EQ(x(1, 0), 2.0);
}

TEST(SelectFrameActivations, EmptyFrameInheritsAnchor) {
  const auto t = indexed_table(split_frames({"he", "", "still"}));
  const Tensor x = select_frame_activations(t);
  EXPECT_EQ(x(0, 0), 0.0);
  EXPECT_EQ(x(1, 0), 0.0);
  EXPECT_EQ(x(2, 0), 1.0);
}

TEST(SelectFrameActivations, SingleFrameAndEmptyFirstFrame) {
  const auto t = indexed_table(split_frames({"he could still"}));
  const Tensor x = select_frame_activations(t);
  ASSERT_EQ(x.rows(), 1u);
  EXPECT_EQ(x(0, 1), 0.0);
  EXPECT_THROW(select_frame_activations(indexed_table(split_frames({"", "a"}))), ValidationError);
}

TEST(FutureFeatures, FutureWordsOfHeardWord) {
  const auto t = indexed_table(split_frames({"He could still hear and feel that", "sharp metal"}));
  const Tensor f = build_future_features(t, {4, 2}, 2);
  ASSERT_EQ(f.cols(), 4u);
  EXPECT_EQ(t.words[4], "and");
  EXPECT_EQ(t.words[5], "feel");
  EXPECT_EQ(f(0, 0), 4.0);
  EXPECT_EQ(f(0, 2), 5.0);
  EXPECT_EQ(f(0, 3), -5.0);
}

TEST(FutureFeatures, PastStoryEndIsZero) {
  const auto t = indexed_table(split_frames({"a b", "c"}));
  const Tensor f = build_future_features(t, {1, 3}, 2);
  for (std::size_t c = 0; c < f.cols(); ++c) EXPECT_EQ(f(1, c), 0.0);
  EXPECT_EQ(f(0, 0), 1.0);
  EXPECT_EQ(f(0, 2), 2.0);
  EXPECT_EQ(f(0, 4), 0.0);
}

TEST(FutureFeatures, WidthIsReducedDimTimesLength) {
  ActivationTable t;
  t.frames = 3;
  t.word_frame = {0, 1, 2};
  t.words = {"a", "b", "c"};
  t.activations = Tensor({3, 20}, 1.0);
  EXPECT_EQ(build_future_features(t, {0, 3}, 20).cols(), 60u);
  EXPECT_THROW(build_future_features(t, {0, 3}, 19), ShapeError);
}

// ---- folds and ridge -----------------------------------------------------------------

TEST(Ridge, FoldBoundsContiguousRemainderLeading) {
  const auto b = fold_bounds(23, 10);
  ASSERT_EQ(b.size(), 10u);
  EXPECT_EQ(b[0], (std::pair<std::size_t, std::size_t>{0, 3}));
  EXPECT_EQ(b[2], (std::pair<std::size_t, std::size_t>{6, 9}));
  EXPECT_EQ(b[3], (std::pair<std::size_t, std::size_t>{9, 11}));
  EXPECT_EQ(b[9].second, 23u);
  EXPECT_THROW(fold_bounds(5, 10), ValidationError);
}

TEST(Ridge, PenaltyGrid) {
  const RidgeSpec s;
  ASSERT_EQ(s.penalties.size(), 10u);
  EXPECT_NEAR(s.penalties.front(), 0.1, 1e-15);
  EXPECT_NEAR(s.penalties.back(), 1e8, 1e-6);
  EXPECT_NEAR(s.penalties[1], 1.0, 1e-12);
  RidgeSpec bad;
  bad.penalties = {1.0, 0.5};
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Ridge, FixedPenaltyMatchesNormalEquations) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_normal({40, 6}, rng);
    const Tensor y = random_normal({40, 8}, rng);
    const double alpha = std::pow(10.0, static_cast<double>(trial % 5) - 1.0);
    const auto got = brain_score(x, y, RidgeSpec::fixed(alpha));
    const Tensor want = normal_equation_predictions(x, y, alpha);
    EXPECT_LT(numkit::max_abs_diff(got.predictions, want), 1e-8) << "trial " << trial;
  }
}

TEST(Ridge, NoiselessLinearMapNearPerfect) {
  std::mt19937_64 rng(5);
  const Tensor x = random_normal({200, 5}, rng);
  const Tensor w = random_normal({5, 7}, rng);
  const auto s = brain_score(x, numkit::matmul(x, w), RidgeSpec{});
  EXPECT_GT(s.score, 0.999);
  EXPECT_EQ(s.fold_scores.size(), 10u);
}

TEST(Ridge, PureNoiseScoresNearZero) {
  const std::size_t n = 100;
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const Tensor x = random_normal({n, 4}, rng);
    const Tensor y = random_normal({n, 6}, rng);
    total += brain_score(x, y, RidgeSpec{}).score;
  }
  EXPECT_LT(std::abs(total / 20.0), 2.0 / std::sqrt(static_cast<double>(n)));
}

TEST(Ridge, InvariantToResponseAffineRescaling) {
  std::mt19937_64 rng(6);
  const Tensor x = random_normal({80, 4}, rng);
  Tensor y = numkit::matmul(x, random_normal({4, 5}, rng));
  y += random_normal({80, 5}, rng);
  std::uniform_real_distribution<double> u(0.5, 4.0);
  for (int trial = 0; trial < 5; ++trial) {
    // Shared positive scale keeps the MSE-selected penalty; per-column offsets are free.
    Tensor shifted = y;
    const double scale = u(rng);
    std::vector<double> offset(5);
    for (auto& o : offset) o = 10.0 * u(rng);
    for (std::size_t i = 0; i < 80; ++i)
      for (std::size_t c = 0; c < 5; ++c) shifted(i, c) = scale * y(i, c) + offset[c];
    const auto a = brain_score(x, y, RidgeSpec{});
    const auto b = brain_score(x, shifted, RidgeSpec{});
    for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(a.voxel_r[c], b.voxel_r[c], 1e-10);

    // Independent per-column scales under a single cross-validated penalty.
    RidgeSpec one;
    one.penalties = {3.0};
    Tensor rescaled = y;
    for (std::size_t c = 0; c < 5; ++c) {
      const double s = (c % 2 ? -1.0 : 1.0) * u(rng);
      for (std::size_t i = 0; i < 80; ++i) rescaled(i, c) = s * y(i, c) + offset[c];
    }
    const auto p = brain_score(x, y, one);
    const auto q = brain_score(x, rescaled, one);
    for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(std::abs(p.voxel_r[c]), std::abs(q.voxel_r[c]), 1e-10);
  }
}

TEST(Ridge, Errors) {
  std::mt19937_64 rng(7);
  EXPECT_THROW(brain_score(random_normal({5, 2}, rng), random_normal({5, 3}, rng), RidgeSpec{}), ValidationError);
  EXPECT_THROW(brain_score(Tensor({20, 3}, 2.0), random_normal({20, 3}, rng), RidgeSpec{}), ValidationError);
  EXPECT_THROW(brain_score(random_normal({20, 3}, rng), random_normal({21, 3}, rng), RidgeSpec{}), ShapeError);
}

TEST(PredictionScore, ZeroAndConstantFutureColumnsScoreZero) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor base = random_normal({60, 4}, rng);
    Tensor y = numkit::matmul(base, random_normal({4, 6}, rng));
    y += random_normal({60, 6}, rng);
    const auto zero = prediction_score(base, Tensor({60, 3}), y, RidgeSpec{});
    EXPECT_LT(std::abs(zero.score), 1e-10);
    Tensor constant({60, 3});
    for (std::size_t i = 0; i < 60; ++i)
      for (std::size_t c = 0; c < 3; ++c) constant(i, c) = 0.1 * static_cast<double>(c + 1) + 3.7;
    EXPECT_LT(std::abs(prediction_score(base, constant, y, RidgeSpec{}).score), 1e-10);
  }
}

TEST(PredictionScore, RowMismatchRejected) {
  EXPECT_THROW(prediction_score(Tensor({10, 2}), Tensor({9, 2}), Tensor({10, 2}), RidgeSpec{}), ShapeError);
}

TEST(RoiScore, WholeAndSingleVoxel) {
  std::mt19937_64 rng(9);
  const Tensor x = random_normal({50, 3}, rng);
  Tensor y = numkit::matmul(x, random_normal({3, 4}, rng));
  y += random_normal({50, 4}, rng);
  const auto whole = brain_score(x, y, RidgeSpec{});
  EXPECT_DOUBLE_EQ(roi_score(x, y, {0, 1, 2, 3}, RidgeSpec{}).score, whole.score);
  RidgeSpec one;
  one.penalties = {1.0};
  EXPECT_NEAR(roi_score(x, y, {2}, one).score, brain_score(x, y, one).voxel_r[2], 1e-12);
  EXPECT_THROW(roi_score(x, y, {4}, one), ValidationError);
  EXPECT_THROW(roi_score(x, y, {1, 1}, one), ValidationError);
  EXPECT_THROW(roi_score(x, y, {}, one), ValidationError);
}

// ---- sweep ---------------------------------------------------------------------------

namespace {

std::vector<SweepStory> synthetic_stories(std::uint64_t seed, data::RoiAtlas* atlas = nullptr) {
  data::SynthSpec spec;
  spec.seed = seed;
  const auto ds = data::synth_dataset(spec);
  if (atlas) *atlas = ds.atlas;
  return sweep_stories(ds, ds.subjects().front());
}

}  // namespace

TEST(Sweep, ParseRange) {
  EXPECT_EQ(parse_range("0:3"), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(parse_range("5"), (std::vector<std::size_t>{5}));
  EXPECT_THROW(parse_range("3:1"), ValidationError);
  EXPECT_THROW(parse_range("a:b"), ValidationError);
  EXPECT_THROW(parse_range("-1:2"), ValidationError);
  EXPECT_THROW(parse_range("1:2x"), ValidationError);
}

TEST(Sweep, SingleCellEqualsPredictionScore) {
  data::SynthSpec spec;
  spec.stories = 3;
  spec.voxels = 80;
  const auto ds = data::synth_dataset(spec);
  const auto stories = sweep_stories(ds, "sub-01");
  const auto roi = ds.atlas.resolve("BPC");
  SweepSpec sw;
  sw.d_values = {4};
  sw.l_values = {2};
  sw.ridge.folds = 1;
  sw.ridge.penalties = {10.0};
  sw.reduced_dim = 8;
  const auto surf = score_sweep(stories, {{"BPC", roi}}, sw);
  ASSERT_EQ(surf.size(), 1u);
  ASSERT_EQ(surf[0].cells.size(), 1u);

  // Same computation by hand: PCA on all words, stacked features, one prediction_score.
  std::size_t words = 0;
  for (const auto& s : stories) words += s.table.word_count();
  Tensor all({words, stories[0].table.activations.cols()});
  std::size_t r = 0;
  for (const auto& s : stories)
    for (std::size_t w = 0; w < s.table.word_count(); ++w, ++r)
      for (std::size_t c = 0; c < all.cols(); ++c) all(r, c) = s.table.activations(w, c);
  const auto pca = numkit::pca_reduce(all, 8).model;
  std::vector<Tensor> base, fut, resp;
  for (const auto& s : stories) {
    const auto red = s.table.with_activations(pca.transform(s.table.activations));
    base.push_back(select_frame_activations(red));
    fut.push_back(build_future_features(red, {4, 2}, 8));
    resp.push_back(detail::take_columns(s.responses, roi));
  }
  auto stack = [](const std::vector<Tensor>& parts) {
    std::size_t rows = 0;
    for (const auto& p : parts) rows += p.rows();
    Tensor out({rows, parts[0].cols()});
    std::size_t o = 0;
    for (const auto& p : parts)
      for (std::size_t i = 0; i < p.rows(); ++i, ++o)
        for (std::size_t c = 0; c < p.cols(); ++c) out(o, c) = p(i, c);
    return out;
  };
  const auto want = prediction_score(stack(base), stack(fut), stack(resp), sw.ridge);
  EXPECT_NEAR(surf[0].cells[0].score, want.score, 1e-12);
}

TEST(Sweep, SurfaceShapeCsvAndSvg) {
  data::SynthSpec spec;
  spec.stories = 2;
  spec.voxels = 60;
  spec.bpc_fraction = 0.2;
  const auto ds = data::synth_dataset(spec);
  const auto stories = sweep_stories(ds, "sub-01");
  SweepSpec sw;
  sw.d_values = parse_range("0:2");
  sw.l_values = parse_range("1:2");
  sw.reduced_dim = 6;
  const auto surf = score_sweep(stories, {{"BPC", ds.atlas.resolve("BPC")}}, sw);
  EXPECT_EQ(surf[0].cells.size(), 6u);
  const auto csv = surfaces_csv(surf);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "d,l,roi_set,score,fold_std");
  const auto svg = surface_svg(surf[0]);
  std::size_t polylines = 0;
  for (auto p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++polylines;
  EXPECT_EQ(polylines, 2u);
  EXPECT_NE(svg.find(">l=1<"), std::string::npos);
  EXPECT_NE(svg.find(">l=2<"), std::string::npos);
  EXPECT_EQ(surfaces_csv({}), "d,l,roi_set,score,fold_std\n");
}

TEST(Sweep, OrderIndependentAcrossThreadCounts) {
  data::SynthSpec spec;
  spec.stories = 2;
  spec.voxels = 60;
  spec.bpc_fraction = 0.2;
  const auto ds = data::synth_dataset(spec);
  const auto stories = sweep_stories(ds, "sub-01");
  SweepSpec sw;
  sw.d_values = parse_range("0:3");
  sw.l_values = {1, 2};
  sw.reduced_dim = 6;
  const std::vector<RoiSet> rois = {{"BPC", ds.atlas.resolve("BPC")}};
  setenv("PREDFT_THREADS", "1", 1);
  const auto serial = surfaces_csv(score_sweep(stories, rois, sw));
  setenv("PREDFT_THREADS", "3", 1);
  const auto threaded = surfaces_csv(score_sweep(stories, rois, sw));
  unsetenv("PREDFT_THREADS");
  EXPECT_EQ(serial, threaded);
}

TEST(Sweep, PlantedSignalRecoveredOnBpcVoxels) {
  for (std::uint64_t seed : {7u, 8u, 9u}) {
    data::RoiAtlas atlas;
    const auto stories = synthetic_stories(seed, &atlas);
    const auto bpc = atlas.resolve("BPC");
    const auto random = atlas.random_voxels(seed + 1000, bpc.size());
    SweepSpec sw;
    sw.d_values = {4, 10};
    sw.l_values = {2};
    const auto surf = score_sweep(stories, {{"BPC", bpc}, {"Random", random}}, sw);
    EXPECT_GT(surf[0].at(0, 0).score, 0.0) << "seed " << seed;
    EXPECT_GT(surf[0].at(0, 0).score, surf[0].at(1, 0).score) << "seed " << seed;
    EXPECT_GT(surf[0].at(0, 0).score, surf[1].at(0, 0).score) << "seed " << seed;
  }
}
