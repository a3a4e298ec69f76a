#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "predft/error.hpp"
#include "predft/numkit/tensor.hpp"

namespace predft::data {

using numkit::Shape;
using numkit::Tensor;

using FrameWords = std::vector<std::vector<std::string>>;

/// How far ahead of a frame's anchor word a prediction looks.
/// `distance` words from the anchor to the first predicted word, `length`
/// consecutive words predicted.
struct PredictionWindow {
  std::size_t distance = 0;
  std::size_t length = 1;

  void validate() const {
    if (length < 1) throw ValidationError("prediction length must be >= 1");
  }
  friend bool operator==(const PredictionWindow&, const PredictionWindow&) = default;
};

enum class Layout { Surface, Volume };

inline std::string layout_name(Layout l) { return l == Layout::Surface ? "surface" : "volume"; }

inline Layout parse_layout(const std::string& s) {
  if (s == "surface") return Layout::Surface;
  if (s == "volume") return Layout::Volume;
  throw ValidationError("unknown fMRI layout '" + s + "'");
}

/// One subject listening to one story.
///
/// `fmri` keeps time on the trailing axis: voxels×frames for surface data,
/// w×h×d×frames for volumes. Voxel v of a volume is the row-major flat index
/// over (w, h, d), so both layouts view as a voxels×frames matrix.
struct Recording {
  std::string subject;
  std::string story;
  Layout layout = Layout::Surface;
  Tensor fmri;
  double tr_seconds = 2.0;
  FrameWords frame_words;

  std::size_t frame_count() const { return fmri.shape().back(); }
  std::size_t voxel_count() const { return fmri.size() / frame_count(); }

  /// voxels×frames view of the data.
  Tensor voxel_matrix() const { return fmri.reshaped({voxel_count(), frame_count()}); }

  void validate() const {
    if (fmri.empty()) throw ValidationError(subject + "/" + story + ": missing fMRI data");
    const std::size_t want_rank = layout == Layout::Surface ? 2 : 4;
    if (fmri.rank() != want_rank) {
      throw ValidationError(subject + "/" + story + ": " + layout_name(layout) +
                            " data must have rank " + std::to_string(want_rank) + ", got " +
                            numkit::shape_string(fmri.shape()));
    }
    if (frame_words.size() != frame_count()) {
      throw ValidationError(subject + "/" + story + ": " + std::to_string(frame_words.size()) +
                            " word frames for " + std::to_string(frame_count()) + " fMRI frames");
    }
    if (!(tr_seconds > 0.0)) throw ValidationError(subject + "/" + story + ": TR must be positive");
  }
};

inline std::vector<std::string> flatten_words(const FrameWords& frames) {
  std::vector<std::string> out;
  for (const auto& f : frames) out.insert(out.end(), f.begin(), f.end());
  return out;
}

/// Frame index of every word, in story order.
inline std::vector<std::size_t> word_frames(const FrameWords& frames) {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < frames.size(); ++t) out.insert(out.end(), frames[t].size(), t);
  return out;
}

/// Global index of each frame's first word. A frame without words inherits
/// the previous frame's anchor; the first frame must not be empty.
inline std::vector<std::size_t> frame_anchors(const FrameWords& frames) {
  std::vector<std::size_t> anchors;
  anchors.reserve(frames.size());
  std::size_t next = 0;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].empty()) {
      if (t == 0) throw ValidationError("first frame has no words to anchor on");
      anchors.push_back(anchors.back());
    } else {
      anchors.push_back(next);
    }
    next += frames[t].size();
  }
  return anchors;
}

}  // namespace predft::data
