#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "predft/data/dataset.hpp"
#include "predft/data/preprocess.hpp"
#include "predft/data/splits.hpp"
#include "predft/metrics/report.hpp"
#include "predft/model/generate.hpp"

namespace predft::model {

/// Which data a run trains and evaluates on.
struct RunData {
  std::string roi = "BPC";
  bool shuffle_fmri = false;
  data::SplitMode mode = data::SplitMode::WithinSubject;
};

/// Vocabulary, geometry-complete config and examples for every split.
struct Prepared {
  ModelConfig config;
  data::Vocab vocab;
  std::vector<std::size_t> roi_voxels;
  std::vector<Example> train, valid, test;
  std::vector<data::Violation> audit;
};

/// Seed for shuffling the frames of the i-th recording of a run.
inline std::uint64_t shuffle_seed(std::uint64_t seed, std::size_t i) {
  return seed * 0x9e3779b97f4a7c15ULL + 0xbf58476d1ce4e5b9ULL * (i + 1);
}

/// Splits the dataset, builds the vocabulary from training text and cuts
/// every recording into examples. Held-out windows do not overlap in text.
inline Prepared prepare_run(const data::Dataset& ds, const ModelConfig& base, const RunData& run) {
  base.validate();
  auto recordings = ds.recordings;
  if (run.shuffle_fmri) {
    for (std::size_t i = 0; i < recordings.size(); ++i)
      recordings[i] = data::shuffle_frames(recordings[i], shuffle_seed(base.seed, i));
  }
  const auto splits = data::make_splits(recordings, data::default_split(recordings, run.mode));
  if (!splits.audit.empty()) throw ValidationError("split audit failed: " + splits.audit.front().kind);

  Prepared p;
  p.audit = splits.audit;
  std::vector<std::string> words;
  std::size_t frames = 0;
  for (const auto& r : splits.train) {
    for (const auto& f : r.frame_words) words.insert(words.end(), f.begin(), f.end());
    frames += r.frame_count();
  }
  p.vocab = data::Vocab::build(words);
  p.config = base;
  p.config.vocab_size = p.vocab.size();
  p.config.tokens_per_frame = frames ? static_cast<double>(words.size()) / static_cast<double>(frames) : 1.0;
  const auto& first = splits.train.front();
  if (first.layout == data::Layout::Volume) {
    p.config.input_shape = {first.fmri.dim(0), first.fmri.dim(1), first.fmri.dim(2)};
  } else {
    p.config.input_shape = {first.voxel_count()};
  }
  if (p.config.side_network) {
    p.roi_voxels = ds.atlas.resolve(run.roi);
    p.config.roi_width = p.roi_voxels.size();
  } else {
    p.config.roi_width = 0;
  }
  p.config.require_geometry();

  auto cut = [&](const std::vector<data::Recording>& recs, std::size_t stride) {
    std::vector<Example> out;
    for (const auto& r : recs) {
      auto ex = make_examples(r, p.roi_voxels, p.vocab, p.config, stride);
      out.insert(out.end(), std::make_move_iterator(ex.begin()), std::make_move_iterator(ex.end()));
    }
    return out;
  };
  p.train = cut(splits.train, p.config.train_stride);
  p.valid = cut(splits.valid, p.config.retained_frames());
  p.test = cut(splits.test, p.config.retained_frames());
  if (p.train.empty()) throw ValidationError("stories are shorter than one example window");
  return p;
}

/// Decoded text for each example next to its ground truth.
inline std::vector<metrics::EvalPair> decode_examples(const PredFT& model, const data::Vocab& vocab,
                                                      const std::vector<Example>& examples) {
  const ModelConfig& cfg = model.config();
  std::vector<metrics::EvalPair> out;
  for (const auto& e : examples) {
    metrics::EvalPair pair;
    pair.decoded = vocab.detokenize(generate(model, e, cfg.max_generate, cfg.beam_width));
    pair.truth = e.truth;
    pair.frame_sizes = e.frame_sizes;
    out.push_back(std::move(pair));
  }
  return out;
}

}  // namespace predft::model
