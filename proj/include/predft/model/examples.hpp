#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "predft/data/preprocess.hpp"
#include "predft/data/recording.hpp"
#include "predft/data/vocab.hpp"
#include "predft/model/network.hpp"

namespace predft::model {

using data::TokenId;

/// One window of k+1 frames and the text heard during its first k* frames.
struct Example {
  std::string subject;
  std::string story;
  std::size_t start = 0;                   ///< first frame of the window
  Tensor fmri;                             ///< [d_s × (k+1)] or [w × h × d × (k+1)]
  Tensor rois;                             ///< [(k+1) × d_r]; empty without a side network
  std::vector<TokenId> words;              ///< target text of the retained frames
  std::vector<std::size_t> word_fragments; ///< retained-frame index of each word
  std::vector<TokenId> future;             ///< flattened side-decoder targets
  std::vector<std::string> truth;          ///< normalized target words
  std::vector<std::size_t> frame_sizes;    ///< words per retained frame
};

/// Window start frames: every `stride` frames, plus the last full window so
/// the story tail is covered.
inline std::vector<std::size_t> window_starts(std::size_t frames, std::size_t window, std::size_t stride) {
  std::vector<std::size_t> out;
  if (frames < window) return out;
  for (std::size_t s = 0; s + window <= frames; s += stride) out.push_back(s);
  if (out.back() + window < frames) out.push_back(frames - window);
  return out;
}

/// Cuts a recording into examples. fMRI is voxel-normalized over the whole
/// run first; `roi` lists the flat voxel indices fed to the side network.
inline std::vector<Example> make_examples(const data::Recording& rec, const std::vector<std::size_t>& roi,
                                          const data::Vocab& vocab, const ModelConfig& cfg,
                                          std::size_t stride) {
  rec.validate();
  const std::size_t T = rec.frame_count(), V = rec.voxel_count(), k1 = cfg.frames, ks = cfg.retained_frames();
  const Tensor norm = data::voxel_normalize(rec.fmri);
  const auto future = data::extract_prediction_targets(rec.frame_words, cfg.window, vocab);
  for (std::size_t v : roi)
    if (v >= V) throw ValidationError("ROI voxel " + std::to_string(v) + " outside recording");
  Shape shape = rec.fmri.shape();
  shape.back() = k1;

  std::vector<Example> out;
  for (std::size_t s : window_starts(T, k1, stride)) {
    Example e;
    e.subject = rec.subject;
    e.story = rec.story;
    e.start = s;
    e.fmri = Tensor(shape);
    for (std::size_t v = 0; v < V; ++v)
      for (std::size_t t = 0; t < k1; ++t) e.fmri[v * k1 + t] = norm[v * T + s + t];
    if (cfg.side_network) {
      e.rois = Tensor({k1, roi.size()});
      for (std::size_t t = 0; t < k1; ++t)
        for (std::size_t c = 0; c < roi.size(); ++c) e.rois(t, c) = norm[roi[c] * T + s + t];
    }
    for (std::size_t f = 0; f < ks; ++f) {
      std::size_t n = 0;
      for (const auto& w : rec.frame_words[s + f]) {
        const std::string word = data::normalize_word(w);
        if (word.empty()) continue;
        e.words.push_back(vocab.id(word));
        e.word_fragments.push_back(f);
        e.truth.push_back(word);
        ++n;
      }
      e.frame_sizes.push_back(n);
    }
    e.future = flatten_future({future.begin() + static_cast<std::ptrdiff_t>(s),
                               future.begin() + static_cast<std::ptrdiff_t>(s + k1)});
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace predft::model
