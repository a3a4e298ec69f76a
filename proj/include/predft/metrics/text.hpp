#pragma once

// BLEU (clipped n-gram precision, brevity penalty, no smoothing) and ROUGE-1.
// All scores are on a 0-100 scale.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include "predft/error.hpp"

namespace predft::metrics {

using Words = std::vector<std::string>;

constexpr std::size_t kMaxNgram = 4;

/// Sufficient statistics for corpus BLEU: clipped matches and candidate
/// n-gram totals per order, candidate length, effective reference length.
struct BleuStats {
  std::array<double, kMaxNgram> matches{};
  std::array<double, kMaxNgram> totals{};
  double candidate_length = 0.0;
  double reference_length = 0.0;

  BleuStats& operator+=(const BleuStats& o) {
    for (std::size_t n = 0; n < kMaxNgram; ++n) {
      matches[n] += o.matches[n];
      totals[n] += o.totals[n];
    }
    candidate_length += o.candidate_length;
    reference_length += o.reference_length;
    return *this;
  }
};

inline std::map<Words, std::size_t> ngram_counts(const Words& w, std::size_t n) {
  std::map<Words, std::size_t> out;
  for (std::size_t i = 0; i + n <= w.size(); ++i) ++out[Words(w.begin() + i, w.begin() + i + n)];
  return out;
}

/// Effective reference length: the reference length closest to the
/// candidate's, the shorter one on ties.
inline std::size_t effective_reference_length(std::size_t c, const std::vector<Words>& refs) {
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = [c](std::size_t len) { return len > c ? len - c : c - len; };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  return best;
}

inline BleuStats bleu_stats(const Words& candidate, const std::vector<Words>& references) {
  if (references.empty()) throw ValidationError("bleu: no reference");
  for (const auto& r : references)
    if (r.empty()) throw ValidationError("bleu: empty reference");
  BleuStats s;
  s.candidate_length = static_cast<double>(candidate.size());
  s.reference_length = static_cast<double>(effective_reference_length(candidate.size(), references));
  for (std::size_t n = 1; n <= kMaxNgram; ++n) {
    std::map<Words, std::size_t> max_ref;
    for (const auto& r : references)
      for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
    std::size_t clipped = 0, total = 0;
    for (const auto& [g, c] : ngram_counts(candidate, n)) {
      total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) clipped += std::min(c, it->second);
    }
    s.matches[n - 1] = static_cast<double>(clipped);
    s.totals[n - 1] = static_cast<double>(total);
  }
  return s;
}

inline double brevity_penalty(double c, double r) {
  if (c > r) return 1.0;
  if (c == 0.0) return 0.0;
  return std::exp(1.0 - r / c);
}

/// BLEU-1..max_n from accumulated statistics. A zero precision at any order
/// up to n makes BLEU-n zero.
inline std::vector<double> bleu_from_stats(const BleuStats& s, std::size_t max_n = kMaxNgram) {
  if (max_n < 1 || max_n > kMaxNgram) throw ValidationError("bleu: max_n must be in [1, 4]");
  const double bp = brevity_penalty(s.candidate_length, s.reference_length);
  std::vector<double> out;
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 1; n <= max_n; ++n) {
    if (s.matches[n - 1] == 0.0 || s.totals[n - 1] == 0.0) {
      zero = true;
    } else {
      log_sum += std::log(s.matches[n - 1] / s.totals[n - 1]);
    }
    out.push_back(zero ? 0.0 : 100.0 * bp * std::exp(log_sum / static_cast<double>(n)));
  }
  return out;
}

inline std::vector<double> bleu(const Words& candidate, const std::vector<Words>& references,
                                std::size_t max_n = kMaxNgram) {
  return bleu_from_stats(bleu_stats(candidate, references), max_n);
}

inline std::vector<double> bleu(const Words& candidate, const Words& reference,
                                std::size_t max_n = kMaxNgram) {
  return bleu(candidate, std::vector<Words>{reference}, max_n);
}

struct Rouge {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Clipped unigram overlap.
inline Rouge rouge1(const Words& candidate, const Words& reference) {
  const auto cand = ngram_counts(candidate, 1);
  const auto ref = ngram_counts(reference, 1);
  std::size_t overlap = 0;
  for (const auto& [g, c] : cand) {
    auto it = ref.find(g);
    if (it != ref.end()) overlap += std::min(c, it->second);
  }
  Rouge r;
  if (overlap == 0) return r;
  r.precision = 100.0 * static_cast<double>(overlap) / static_cast<double>(candidate.size());
  r.recall = 100.0 * static_cast<double>(overlap) / static_cast<double>(reference.size());
  r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

}  // namespace predft::metrics
