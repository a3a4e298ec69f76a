#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "predft/data/recording.hpp"
#include "predft/data/vocab.hpp"

namespace predft::data {

/// Normalizes each voxel's time series (trailing axis) to zero mean and unit
/// standard deviation. Voxels that are constant over time become zeros.
inline Tensor voxel_normalize(const Tensor& fmri) {
  const std::size_t frames = fmri.shape().back();
  if (frames < 2) throw ValidationError("voxel_normalize: need at least two frames");
  const std::size_t voxels = fmri.size() / frames;
  Tensor out(fmri.shape());
  for (std::size_t v = 0; v < voxels; ++v) {
    const double* x = fmri.data().data() + v * frames;
    double* y = out.data().data() + v * frames;
    double mu = 0.0, raw = 0.0;
    for (std::size_t t = 0; t < frames; ++t) {
      mu += x[t];
      raw += x[t] * x[t];
    }
    mu /= static_cast<double>(frames);
    double var = 0.0;
    for (std::size_t t = 0; t < frames; ++t) var += (x[t] - mu) * (x[t] - mu);
    if (var <= 1e-24 * raw || var == 0.0) continue;  // constant voxel
    const double inv = 1.0 / std::sqrt(var / static_cast<double>(frames));
    for (std::size_t t = 0; t < frames; ++t) y[t] = (x[t] - mu) * inv;
  }
  return out;
}

/// Token ids of the `window.length` words starting `window.distance` words
/// after each frame's anchor. Positions past the story end are padding.
inline std::vector<std::vector<TokenId>> extract_prediction_targets(const FrameWords& frames,
                                                                    PredictionWindow window,
                                                                    const Vocab& vocab) {
  window.validate();
  const auto words = flatten_words(frames);
  const auto anchors = frame_anchors(frames);
  std::vector<std::vector<TokenId>> out(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    out[t].reserve(window.length);
    for (std::size_t k = 0; k < window.length; ++k) {
      const std::size_t pos = anchors[t] + window.distance + k;
      out[t].push_back(pos < words.size() ? vocab.id(words[pos]) : Vocab::kPad);
    }
  }
  return out;
}

/// Frame order permutation drawn from `seed`.
inline std::vector<std::size_t> frame_permutation(std::size_t frames, std::uint64_t seed) {
  std::vector<std::size_t> perm(frames);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

/// Copy of `rec` whose fMRI frames are permuted; words keep their order.
inline Recording shuffle_frames(const Recording& rec, std::uint64_t seed) {
  const std::size_t frames = rec.frame_count();
  if (frames < 2) throw ValidationError("shuffle_frames: need at least two frames");
  const auto perm = frame_permutation(frames, seed);
  Recording out = rec;
  const std::size_t voxels = rec.voxel_count();
  for (std::size_t v = 0; v < voxels; ++v)
    for (std::size_t t = 0; t < frames; ++t)
      out.fmri[v * frames + t] = rec.fmri[v * frames + perm[t]];
  return out;
}

}  // namespace predft::data
