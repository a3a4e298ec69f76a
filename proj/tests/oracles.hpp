#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "predft/data.hpp"
#include "predft/metrics.hpp"
#include "predft/numkit/tensor.hpp"

// Independent reference computations shared by the unit and acceptance suites.
namespace predft::testing {

using metrics::Words;

inline Words W(const std::string& s) {
  std::istringstream is(s);
  Words out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

struct Fixture {
  const char* candidate;
  const char* reference;
  std::array<double, 4> bleu;
  std::array<double, 3> rouge;  // precision, recall, f1
};

// Reference values from an independent implementation (NLTK sentence_bleu
// without smoothing, its near-zero floor reported here as 0; ROUGE-1 by
// clipped unigram counting).
inline const Fixture kFixtures[] = {
    {"the the the the the the the", "the cat is on the mat", {28.57142857142857, 0.0, 0.0, 0.0}, {28.571428571428573, 33.333333333333336, 30.76923076923077}},
    {"a b c d e", "a b c d e f g h i j", {36.787944117144235, 36.787944117144235, 36.787944117144235, 36.787944117144235}, {100.0, 50.0, 66.66666666666667}},
    {"he could still hear and feel", "he could still hear and feel", {100.0, 100.0, 100.0, 100.0}, {100.0, 100.0, 100.0}},
    {"a b c", "a d", {33.33333333333333, 0.0, 0.0, 0.0}, {33.333333333333336, 50.0, 40.0}},
    {"the cat sat on the mat", "the cat is on the mat", {83.33333333333334, 70.71067811865476, 50.0, 0.0}, {83.33333333333333, 83.33333333333333, 83.33333333333333}},
    {"it was more real than any dream", "it was more real than any dream he had ever had", {56.47181220077593, 56.47181220077593, 56.47181220077593, 56.47181220077593}, {100.0, 63.63636363636363, 77.77777777777777}},
    {"x y z", "a b c", {0, 0, 0, 0}, {0.0, 0.0, 0.0}},
    {"he should still hear and and feel that explosion", "he could still hear and feel that sharp metal ripping explosion", {62.2795757824184, 49.934750308164276, 38.495439176194544, 0.0}, {77.77777777777777, 63.63636363636363, 70.0}},
    {"one two three four five six seven eight", "one two three four", {50.0, 46.29100498862758, 41.491326668312176, 34.5720784641941}, {50.0, 100.0, 66.66666666666667}},
    {"and then she went to the store and bought milk", "then she went to the big store and bought some milk", {81.43536762323636, 70.0884050215718, 60.57279821005457, 48.95914832758051}, {90.0, 81.81818181818181, 85.71428571428571}},
};

// sacrebleu corpus_score over all fixtures (tokenize=none, smooth_method=none).
inline const std::array<double, 4> kCorpusBleu = {65.44293222418996, 58.4867902772625, 52.973137438041626,
                                           46.75074942067192};

inline std::size_t levenshtein(const Words& a, const Words& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Centered ridge through Gaussian elimination with partial pivoting.
inline numkit::Tensor normal_equation_predictions(const numkit::Tensor& x, const numkit::Tensor& y, double alpha) {
  const std::size_t n = x.rows(), p = x.cols(), v = y.cols();
  std::vector<double> mx(p, 0.0), my(v, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) mx[j] += x(i, j) / n;
    for (std::size_t j = 0; j < v; ++j) my[j] += y(i, j) / n;
  }
  // Augmented system [XcᵀXc + αI | XcᵀYc]
  std::vector<std::vector<double>> a(p, std::vector<double>(p + v, 0.0));
  for (std::size_t r = 0; r < p; ++r) {
    for (std::size_t c = 0; c < p; ++c)
      for (std::size_t i = 0; i < n; ++i) a[r][c] += (x(i, r) - mx[r]) * (x(i, c) - mx[c]);
    a[r][r] += alpha;
    for (std::size_t c = 0; c < v; ++c)
      for (std::size_t i = 0; i < n; ++i) a[r][p + c] += (x(i, r) - mx[r]) * (y(i, c) - my[c]);
  }
  for (std::size_t col = 0; col < p; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < p; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    for (std::size_t r = 0; r < p; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < p + v; ++c) a[r][c] -= f * a[col][c];
    }
  }
  numkit::Tensor pred({n, v});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < v; ++c) {
      double s = my[c];
      for (std::size_t r = 0; r < p; ++r) s += (x(i, r) - mx[r]) * a[r][p + c] / a[r][r];
      pred(i, c) = s;
    }
  return pred;
}

inline std::vector<data::Recording> grid_recordings(std::size_t subjects, std::size_t stories) {
  std::vector<data::Recording> out;
  for (std::size_t s = 0; s < subjects; ++s)
    for (std::size_t k = 0; k < stories; ++k) {
      data::Recording r;
      r.subject = "S" + std::to_string(s);
      r.story = "s" + std::to_string(k);
      r.fmri = numkit::Tensor({2, 2});
      r.frame_words = {{"a"}, {"b"}};
      out.push_back(std::move(r));
    }
  return out;
}


struct SplitTrial {
  bool clean_passed = false;     ///< the clean split audits empty
  bool violation_caught = false;  ///< the injected leak is the only kind reported
};

/// Clean cross-subject split of a random grid, then exactly one injected subject or story leak.
inline SplitTrial adversarial_split_trial(std::mt19937_64& rng) {
  using data::Part;
  const std::size_t ns = 3 + rng() % 4, nk = 3 + rng() % 5;
  const auto recs = grid_recordings(ns, nk);
  // Held-out subjects and stories are disjoint from training.
  const std::size_t held_subj = 1 + rng() % (ns - 1), held_story = 1 + rng() % (nk - 1);
  data::SplitSpec spec{data::SplitMode::CrossSubject, {}};
  auto subj = [](std::size_t s) { return "S" + std::to_string(s); };
  auto story = [](std::size_t k) { return "s" + std::to_string(k); };
  for (std::size_t s = 0; s < ns; ++s)
    for (std::size_t k = 0; k < nk; ++k) {
      const bool subj_out = s >= ns - held_subj, story_out = k >= nk - held_story;
      if (!subj_out && !story_out) spec.assignments.push_back({subj(s), story(k), Part::Train});
      if (subj_out && story_out) spec.assignments.push_back({subj(s), story(k), rng() % 2 ? Part::Test : Part::Valid});
    }
  SplitTrial t;
  t.clean_passed = data::make_splits(recs, spec).audit.empty();

  const bool inject_subject = rng() % 2;
  const std::size_t s_in = rng() % (ns - held_subj), k_in = rng() % (nk - held_story);
  const std::size_t s_out = ns - held_subj + rng() % held_subj, k_out = nk - held_story + rng() % held_story;
  if (inject_subject) {
    spec.assignments.push_back({subj(s_out), story(k_in), Part::Train});
  } else {
    spec.assignments.push_back({subj(s_in), story(k_out), Part::Train});
  }
  const auto audit = data::make_splits(recs, spec).audit;
  const std::string want = inject_subject ? "subject-overlap" : "story-overlap";
  t.violation_caught = !audit.empty() && std::all_of(audit.begin(), audit.end(),
                                                      [&](const data::Violation& v) { return v.kind == want; });
  return t;
}

}  // namespace predft::testing
