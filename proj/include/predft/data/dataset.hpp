#pragma once

// Dataset directory layout:
//
//   manifest.json   {tr_seconds, subjects, stories, recordings, atlas, lexicon?}
//   tensors/        tensor container with every fMRI array (and lexicon embeddings)
//   words/<story>.json  frame_words, one JSON array of arrays per story
//   lexicon.json    word list whose rows index the "lexicon/embeddings" tensor
//
// A recording entry is {subject, story, fmri: <tensor name>, layout, frame_words: <file>}.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "predft/data/atlas.hpp"
#include "predft/data/recording.hpp"
#include "predft/data/vocab.hpp"
#include "predft/error.hpp"
#include "predft/io.hpp"
#include "predft/numkit/tensor_io.hpp"

namespace predft::data {

/// Word-indexed feature table used as the activation provider.
class Lexicon {
 public:
  Lexicon() = default;
  Lexicon(std::vector<std::string> words, Tensor embeddings)
      : words_(std::move(words)), embeddings_(std::move(embeddings)) {
    if (embeddings_.rank() != 2 || embeddings_.rows() != words_.size()) {
      throw ValidationError("lexicon embeddings must be words×dim, got " +
                            numkit::shape_string(embeddings_.shape()) + " for " +
                            std::to_string(words_.size()) + " words");
    }
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!index_.emplace(normalize_word(words_[i]), i).second) {
        throw ValidationError("lexicon lists '" + words_[i] + "' twice");
      }
    }
  }

  const std::vector<std::string>& words() const { return words_; }
  const Tensor& embeddings() const { return embeddings_; }
  std::size_t dim() const { return embeddings_.cols(); }

  std::optional<std::size_t> find(const std::string& word) const {
    auto it = index_.find(normalize_word(word));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<std::string> words_;
  Tensor embeddings_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Dataset {
  double tr_seconds = 2.0;
  std::vector<Recording> recordings;
  RoiAtlas atlas;
  std::optional<Lexicon> lexicon;

  std::vector<std::string> subjects() const {
    std::set<std::string> s;
    for (const auto& r : recordings) s.insert(r.subject);
    return {s.begin(), s.end()};
  }

  std::vector<std::string> stories() const {
    std::set<std::string> s;
    for (const auto& r : recordings) s.insert(r.story);
    return {s.begin(), s.end()};
  }

  std::size_t voxel_count() const {
    if (recordings.empty()) throw ValidationError("dataset has no recordings");
    return recordings.front().voxel_count();
  }

  const Recording& find(const std::string& subject, const std::string& story) const {
    for (const auto& r : recordings)
      if (r.subject == subject && r.story == story) return r;
    throw ValidationError("no recording for " + subject + "/" + story);
  }

  /// Shape consistency, frame/word alignment, ROI bounds and that every
  /// voxel series can be normalized (finite, at least two frames).
  void validate() const {
    if (!(tr_seconds > 0.0)) throw ValidationError("dataset TR must be positive");
    if (recordings.empty()) throw ValidationError("dataset has no recordings");
    std::set<std::pair<std::string, std::string>> seen;
    const std::size_t voxels = voxel_count();
    for (const auto& r : recordings) {
      r.validate();
      if (!seen.emplace(r.subject, r.story).second) {
        throw ValidationError("duplicate recording " + r.subject + "/" + r.story);
      }
      if (r.voxel_count() != voxels) {
        throw ValidationError(r.subject + "/" + r.story + ": " + std::to_string(r.voxel_count()) +
                              " voxels, expected " + std::to_string(voxels));
      }
      if (r.frame_count() < 2) {
        throw ValidationError(r.subject + "/" + r.story + ": need at least two frames");
      }
      if (!r.fmri.all_finite()) {
        throw ValidationError(r.subject + "/" + r.story + ": fMRI contains non-finite values");
      }
      if (r.frame_words.empty() || r.frame_words.front().empty()) {
        throw ValidationError(r.subject + "/" + r.story + ": first frame has no words");
      }
    }
    if (atlas.voxel_count() != voxels) {
      throw ValidationError("atlas covers " + std::to_string(atlas.voxel_count()) +
                            " voxels, recordings have " + std::to_string(voxels));
    }
    atlas.validate();
  }
};

inline std::string fmri_tensor_name(const Recording& r) { return "fmri/" + r.subject + "/" + r.story; }

inline std::string words_file_name(const std::string& story) { return "words/" + story + ".json"; }

/// Writes `ds` into `dir`, which must be empty or absent.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  ds.validate();
  fs::create_directories(dir / "words");
  numkit::TensorMap tensors;
  nlohmann::json recs = nlohmann::json::array();
  std::map<std::string, const FrameWords*> story_words;
  for (const auto& r : ds.recordings) {
    const auto [it, fresh] = story_words.emplace(r.story, &r.frame_words);
    if (!fresh && *it->second != r.frame_words) {
      throw ValidationError("story '" + r.story + "' has different words across subjects");
    }
    tensors.emplace(fmri_tensor_name(r), r.fmri);
    recs.push_back({{"subject", r.subject},
                    {"story", r.story},
                    {"fmri", fmri_tensor_name(r)},
                    {"layout", layout_name(r.layout)},
                    {"frame_words", words_file_name(r.story)},
                    {"tr_seconds", r.tr_seconds}});
  }
  for (const auto& [story, fw] : story_words)
    io::write_json(dir / words_file_name(story), *fw);

  nlohmann::json manifest = {{"tr_seconds", ds.tr_seconds},
                             {"subjects", ds.subjects()},
                             {"stories", ds.stories()},
                             {"recordings", recs},
                             {"atlas", ds.atlas.to_json()}};
  if (ds.lexicon) {
    tensors.emplace("lexicon/embeddings", ds.lexicon->embeddings());
    io::write_json(dir / "lexicon.json", ds.lexicon->words());
    manifest["lexicon"] = {{"words", "lexicon.json"}, {"embeddings", "lexicon/embeddings"}};
  }
  numkit::save_container(dir / "tensors", tensors);
  io::write_json(dir / "manifest.json", manifest);
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest = io::read_json(dir / "manifest.json");
  Dataset ds;
  try {
    ds.tr_seconds = manifest.at("tr_seconds").get<double>();
    const auto tensors = numkit::load_container(dir / "tensors");
    auto tensor = [&](const std::string& name) -> const Tensor& {
      auto it = tensors.find(name);
      if (it == tensors.end()) throw ValidationError("manifest refers to missing tensor '" + name + "'");
      return it->second;
    };
    for (const auto& e : manifest.at("recordings")) {
      Recording r;
      r.subject = e.at("subject").get<std::string>();
      r.story = e.at("story").get<std::string>();
      r.layout = parse_layout(e.at("layout").get<std::string>());
      r.fmri = tensor(e.at("fmri").get<std::string>());
      r.tr_seconds = e.value("tr_seconds", ds.tr_seconds);
      r.frame_words = io::read_json(dir / e.at("frame_words").get<std::string>()).get<FrameWords>();
      ds.recordings.push_back(std::move(r));
    }
    if (ds.recordings.empty()) throw ValidationError("manifest lists no recordings");
    ds.atlas = RoiAtlas::from_json(manifest.at("atlas"), ds.recordings.front().voxel_count());
    if (manifest.contains("lexicon")) {
      const auto& lx = manifest.at("lexicon");
      ds.lexicon.emplace(io::read_json(dir / lx.at("words").get<std::string>()).get<std::vector<std::string>>(),
                         tensor(lx.at("embeddings").get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed dataset manifest in " + dir.string() + ": " + e.what());
  }
  ds.validate();
  return ds;
}

}  // namespace predft::data
