#pragma once

// Positional analysis of decoding errors. Decoded text is aligned to the
// truth with a unit-cost edit alignment; each error is charged to a truth
// position and bucketed by its relative position within its fMRI frame.

#include <array>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "predft/error.hpp"
#include "predft/metrics/text.hpp"

namespace predft::metrics {

enum class ErrorKind { Substitution, Insertion, Deletion };

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::Substitution: return "substitution";
    case ErrorKind::Insertion: return "insertion";
    case ErrorKind::Deletion: return "deletion";
  }
  return "?";
}

struct ErrorEvent {
  ErrorKind kind = ErrorKind::Substitution;
  std::size_t truth_pos = 0;
  std::size_t frame = 0;
  std::size_t pospct = 0;  ///< 10, 20, ..., 100

  friend bool operator==(const ErrorEvent&, const ErrorEvent&) = default;
};

enum class EditOp { Match, Substitute, Delete, Insert };

/// Minimal unit-cost alignment of `decoded` against `truth`, read from the
/// front. At equal cost a diagonal step wins, then deletion, then insertion,
/// so redundant words land after the word they repeat.
inline std::vector<EditOp> edit_alignment(const Words& truth, const Words& decoded) {
  const std::size_t n = truth.size(), m = decoded.size();
  // suffix[i][j]: cost of aligning truth[i..] with decoded[j..]
  std::vector<std::vector<std::size_t>> suffix(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = n + 1; i-- > 0;)
    for (std::size_t j = m + 1; j-- > 0;) {
      if (i == n) {
        suffix[i][j] = m - j;
      } else if (j == m) {
        suffix[i][j] = n - i;
      } else {
        const std::size_t diag = suffix[i + 1][j + 1] + (truth[i] == decoded[j] ? 0 : 1);
        suffix[i][j] = std::min({diag, suffix[i + 1][j] + 1, suffix[i][j + 1] + 1});
      }
    }
  std::vector<EditOp> ops;
  std::size_t i = 0, j = 0;
  while (i < n || j < m) {
    if (i < n && j < m) {
      const bool same = truth[i] == decoded[j];
      if (suffix[i][j] == suffix[i + 1][j + 1] + (same ? 0 : 1)) {
        ops.push_back(same ? EditOp::Match : EditOp::Substitute);
        ++i, ++j;
        continue;
      }
    }
    if (i < n && suffix[i][j] == suffix[i + 1][j] + 1) {
      ops.push_back(EditOp::Delete);
      ++i;
    } else {
      ops.push_back(EditOp::Insert);
      ++j;
    }
  }
  return ops;
}

inline std::size_t edit_cost(const std::vector<EditOp>& ops) {
  std::size_t c = 0;
  for (EditOp op : ops) c += op != EditOp::Match;
  return c;
}

/// Frame index and 1-based within-frame position for each truth word.
struct FramePositions {
  std::vector<std::size_t> frame;
  std::vector<std::size_t> rank;
  std::vector<std::size_t> frame_size;

  explicit FramePositions(const std::vector<std::size_t>& frame_sizes) : frame_size(frame_sizes) {
    for (std::size_t f = 0; f < frame_sizes.size(); ++f)
      for (std::size_t k = 0; k < frame_sizes[f]; ++k) {
        frame.push_back(f);
        rank.push_back(k + 1);
      }
  }

  std::size_t words() const { return frame.size(); }

  /// ceil(10 * rank / size) * 10
  std::size_t pospct(std::size_t pos) const {
    const std::size_t n = frame_size[frame[pos]];
    return (10 * rank[pos] + n - 1) / n * 10;
  }
};

/// Error events for one decoded text. `frame_sizes` lists the truth word
/// count of each frame in order and must cover the truth exactly.
inline std::vector<ErrorEvent> align_errors(const Words& decoded, const Words& truth,
                                            const std::vector<std::size_t>& frame_sizes) {
  if (truth.empty()) throw ValidationError("align_errors: empty truth");
  const FramePositions fp(frame_sizes);
  if (fp.words() != truth.size()) {
    throw ValidationError("align_errors: frame sizes cover " + std::to_string(fp.words()) +
                          " words, truth has " + std::to_string(truth.size()));
  }
  auto event = [&](ErrorKind k, std::size_t pos) {
    return ErrorEvent{k, pos, fp.frame[pos], fp.pospct(pos)};
  };
  std::vector<ErrorEvent> out;
  std::size_t i = 0;
  std::ptrdiff_t last_matched = -1;
  for (EditOp op : edit_alignment(truth, decoded)) {
    switch (op) {
      case EditOp::Match:
        last_matched = static_cast<std::ptrdiff_t>(i++);
        break;
      case EditOp::Substitute:
        out.push_back(event(ErrorKind::Substitution, i++));
        break;
      case EditOp::Delete:
        out.push_back(event(ErrorKind::Deletion, i++));
        break;
      case EditOp::Insert: {
        // Without a match so far, charge the last truth word consumed, or the first.
        std::size_t pos = last_matched >= 0 ? static_cast<std::size_t>(last_matched) : (i > 0 ? i - 1 : 0);
        out.push_back(event(ErrorKind::Insertion, pos));
        break;
      }
    }
  }
  return out;
}

struct PositionHistogram {
  std::array<std::size_t, 10> counts{};
  std::array<double, 10> probability{};
  std::size_t total = 0;

  bool empty() const { return total == 0; }
  double first_half() const { return std::accumulate(probability.begin(), probability.begin() + 5, 0.0); }
  double last_half() const { return std::accumulate(probability.begin() + 5, probability.end(), 0.0); }

  static PositionHistogram from_counts(const std::array<std::size_t, 10>& counts) {
    PositionHistogram h;
    h.counts = counts;
    h.total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    if (h.total > 0)
      for (std::size_t b = 0; b < 10; ++b)
        h.probability[b] = static_cast<double>(counts[b]) / static_cast<double>(h.total);
    return h;
  }
};

inline PositionHistogram error_position_distribution(const std::vector<ErrorEvent>& events) {
  std::array<std::size_t, 10> counts{};
  for (const auto& e : events) {
    if (e.pospct < 10 || e.pospct > 100 || e.pospct % 10 != 0) {
      throw ValidationError("error event with invalid PosPCT " + std::to_string(e.pospct));
    }
    ++counts[e.pospct / 10 - 1];
  }
  return PositionHistogram::from_counts(counts);
}

/// Excess error probability of the later half of each frame over the earlier
/// half, divided by 0.5. Zero for an empty histogram.
inline double info_loss_slope(const PositionHistogram& h) {
  double early = 0.0, late = 0.0;
  for (std::size_t b = 0; b < 5; ++b) early += h.probability[b];
  for (std::size_t b = 5; b < 10; ++b) late += h.probability[b];
  return (late - early) / 0.5;
}

}  // namespace predft::metrics
