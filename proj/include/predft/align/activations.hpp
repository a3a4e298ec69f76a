#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "predft/data/dataset.hpp"
#include "predft/data/recording.hpp"
#include "predft/error.hpp"
#include "predft/numkit/tensor.hpp"

namespace predft::align {

using data::PredictionWindow;
using numkit::Tensor;

/// Per-word feature rows of one story with each word's frame.
struct ActivationTable {
  Tensor activations;                   ///< words×D
  std::vector<std::size_t> word_frame;  ///< non-decreasing
  std::vector<std::string> words;
  std::size_t frames = 0;

  std::size_t word_count() const { return word_frame.size(); }

  void validate() const {
    if (activations.rank() != 2 || activations.rows() != word_frame.size()) {
      throw ShapeError("activation table: " + std::to_string(word_frame.size()) + " words but " +
                       numkit::shape_string(activations.shape()) + " activations");
    }
    for (std::size_t i = 0; i < word_frame.size(); ++i) {
      if (word_frame[i] >= frames) throw ValidationError("activation table: word frame out of range");
      if (i > 0 && word_frame[i] < word_frame[i - 1]) {
        throw ValidationError("activation table: word frames must be non-decreasing");
      }
    }
  }

  /// First word of each frame; an empty frame inherits the previous anchor.
  std::vector<std::size_t> anchors() const {
    std::vector<std::size_t> out(frames);
    std::size_t w = 0;
    for (std::size_t t = 0; t < frames; ++t) {
      while (w < word_frame.size() && word_frame[w] < t) ++w;
      if (w < word_frame.size() && word_frame[w] == t) {
        out[t] = w;
      } else if (t == 0) {
        throw ValidationError("first frame has no words to anchor on");
      } else {
        out[t] = out[t - 1];
      }
    }
    return out;
  }

  /// Same words and frames with new feature rows.
  ActivationTable with_activations(Tensor a) const {
    ActivationTable t = *this;
    t.activations = std::move(a);
    t.validate();
    return t;
  }
};

/// Looks every word up in the lexicon; unknown words are an error.
inline ActivationTable make_activation_table(const data::FrameWords& frames, const data::Lexicon& lexicon) {
  ActivationTable t;
  t.frames = frames.size();
  t.words = data::flatten_words(frames);
  t.word_frame = data::word_frames(frames);
  if (t.words.empty()) throw ValidationError("activation table: story has no words");
  t.activations = Tensor({t.words.size(), lexicon.dim()});
  for (std::size_t i = 0; i < t.words.size(); ++i) {
    const auto row = lexicon.find(t.words[i]);
    if (!row) throw ValidationError("no activation for word '" + t.words[i] + "'");
    for (std::size_t c = 0; c < lexicon.dim(); ++c) t.activations(i, c) = lexicon.embeddings()(*row, c);
  }
  return t;
}

/// Row t is the activation of frame t's first word.
inline Tensor select_frame_activations(const ActivationTable& table) {
  table.validate();
  const auto anchors = table.anchors();
  const std::size_t D = table.activations.cols();
  Tensor out({table.frames, D});
  for (std::size_t t = 0; t < table.frames; ++t)
    for (std::size_t c = 0; c < D; ++c) out(t, c) = table.activations(anchors[t], c);
  return out;
}

/// Row t concatenates the activations of words anchor(t)+d .. anchor(t)+d+l-1;
/// words past the story end contribute zeros.
inline Tensor build_future_features(const ActivationTable& reduced, PredictionWindow window,
                                    std::size_t reduced_dim) {
  window.validate();
  reduced.validate();
  if (reduced.activations.cols() != reduced_dim) {
    throw ShapeError("future features: activations have " + std::to_string(reduced.activations.cols()) +
                     " columns, expected reduced_dim " + std::to_string(reduced_dim));
  }
  const auto anchors = reduced.anchors();
  Tensor out({reduced.frames, reduced_dim * window.length});
  for (std::size_t t = 0; t < reduced.frames; ++t)
    for (std::size_t k = 0; k < window.length; ++k) {
      const std::size_t w = anchors[t] + window.distance + k;
      if (w >= reduced.word_count()) continue;
      for (std::size_t c = 0; c < reduced_dim; ++c) out(t, k * reduced_dim + c) = reduced.activations(w, c);
    }
  return out;
}

}  // namespace predft::align
