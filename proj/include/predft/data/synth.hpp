#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "predft/data/dataset.hpp"
#include "predft/error.hpp"

namespace predft::data {

/// Parameters of the synthetic listening dataset.
///
/// Voxel v at frame t responds to
///   A_v · mean(E[words of frame t-lag])
///   + B_v · mean(E[words anchor(t)+d* .. anchor(t)+d*+l*-1])   (BPC voxels only)
///   + N(0, noise^2)
/// with E ~ N(0, 1) per word and A, B ~ N(0, 1/d_e).
struct SynthSpec {
  std::uint64_t seed = 7;
  std::size_t vocab_size = 64;
  std::size_t subjects = 1;
  std::size_t stories = 8;
  std::size_t frames_per_story = 60;
  std::size_t words_min = 1;
  std::size_t words_max = 5;
  std::size_t embed_dim = 24;
  std::size_t lag = 2;
  double noise = 1.0;
  PredictionWindow planted{4, 2};
  double bpc_fraction = 0.1;
  std::size_t voxels = 500;
  std::vector<std::size_t> volume_shape;  ///< w,h,d; empty for surface data
  double zipf_exponent = 1.1;
  double tr_seconds = 2.0;

  static constexpr std::size_t kBpcRegions = 4;
  static constexpr std::size_t kOtherRegions = 6;

  std::size_t bpc_voxels() const {
    return static_cast<std::size_t>(std::llround(bpc_fraction * static_cast<double>(voxels)));
  }

  void validate() const {
    auto positive = [](std::size_t v, const char* what) {
      if (v == 0) throw ValidationError(std::string("synth: ") + what + " must be positive");
    };
    positive(vocab_size, "vocab_size");
    positive(subjects, "subjects");
    positive(stories, "stories");
    positive(frames_per_story, "frames_per_story");
    positive(words_min, "words_min");
    positive(embed_dim, "embed_dim");
    positive(voxels, "voxels");
    planted.validate();
    if (words_max < words_min) throw ValidationError("synth: words_max < words_min");
    if (!(noise > 0.0)) throw ValidationError("synth: noise must be positive");
    if (!(tr_seconds > 0.0)) throw ValidationError("synth: tr_seconds must be positive");
    if (!(zipf_exponent > 0.0)) throw ValidationError("synth: zipf_exponent must be positive");
    if (frames_per_story < 2) throw ValidationError("synth: need at least two frames per story");
    if (lag >= frames_per_story) throw ValidationError("synth: lag exceeds story length");
    if (planted.distance + planted.length > frames_per_story * words_min) {
      throw ValidationError("synth: planted window (" + std::to_string(planted.distance) + ", " +
                            std::to_string(planted.length) + ") does not fit a " +
                            std::to_string(frames_per_story * words_min) + "-word story");
    }
    if (!(bpc_fraction > 0.0 && bpc_fraction < 1.0)) {
      throw ValidationError("synth: bpc_fraction must lie in (0, 1)");
    }
    if (bpc_voxels() < kBpcRegions || voxels - bpc_voxels() < kOtherRegions) {
      throw ValidationError("synth: too few voxels to populate every region");
    }
    if (!volume_shape.empty()) {
      if (volume_shape.size() != 3) throw ValidationError("synth: volume_shape needs three extents");
      if (numkit::shape_size(volume_shape) != voxels) {
        throw ValidationError("synth: volume_shape does not multiply to the voxel count");
      }
    }
  }

  nlohmann::json to_json() const {
    return {{"seed", seed},
            {"vocab_size", vocab_size},
            {"subjects", subjects},
            {"stories", stories},
            {"frames_per_story", frames_per_story},
            {"words_min", words_min},
            {"words_max", words_max},
            {"embed_dim", embed_dim},
            {"lag", lag},
            {"noise", noise},
            {"planted_distance", planted.distance},
            {"planted_length", planted.length},
            {"bpc_fraction", bpc_fraction},
            {"voxels", voxels},
            {"volume_shape", volume_shape},
            {"zipf_exponent", zipf_exponent},
            {"tr_seconds", tr_seconds}};
  }

  static SynthSpec from_json(const nlohmann::json& j) {
    SynthSpec s;
    try {
      s.seed = j.value("seed", s.seed);
      s.vocab_size = j.value("vocab_size", s.vocab_size);
      s.subjects = j.value("subjects", s.subjects);
      s.stories = j.value("stories", s.stories);
      s.frames_per_story = j.value("frames_per_story", s.frames_per_story);
      s.words_min = j.value("words_min", s.words_min);
      s.words_max = j.value("words_max", s.words_max);
      s.embed_dim = j.value("embed_dim", s.embed_dim);
      s.lag = j.value("lag", s.lag);
      s.noise = j.value("noise", s.noise);
      s.planted.distance = j.value("planted_distance", s.planted.distance);
      s.planted.length = j.value("planted_length", s.planted.length);
      s.bpc_fraction = j.value("bpc_fraction", s.bpc_fraction);
      s.voxels = j.value("voxels", s.voxels);
      s.volume_shape = j.value("volume_shape", s.volume_shape);
      s.zipf_exponent = j.value("zipf_exponent", s.zipf_exponent);
      s.tr_seconds = j.value("tr_seconds", s.tr_seconds);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("synth config: ") + e.what());
    }
    s.validate();
    return s;
  }
};

/// Pronounceable, distinct pseudo-words: two syllables, or three once the
/// two-syllable space is used up.
inline std::vector<std::string> pseudo_words(std::size_t n) {
  static const char* const syl[] = {"ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo",
                                    "pe", "du", "ga", "fi", "bo", "ze", "hu", "ja"};
  constexpr std::size_t S = sizeof(syl) / sizeof(syl[0]);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t k = i;
    const std::size_t parts = k < S * S ? 2 : 3;
    if (parts == 3) k -= S * S;
    if (k >= S * S * S) throw ValidationError("synth: vocabulary too large for the syllable set");
    std::string w;
    for (std::size_t p = 0; p < parts; ++p) {
      w += syl[k % S];
      k /= S;
    }
    out.push_back(std::move(w));
  }
  return out;
}

inline const std::vector<std::string>& synth_bpc_region_names() {
  static const std::vector<std::string> names = {"superior_temporal", "middle_temporal",
                                                 "inferior_parietal", "supramarginal"};
  return names;
}

inline const std::vector<std::string>& synth_other_region_names() {
  static const std::vector<std::string> names = {"G_and_S_cingul-Ant", "G_and_S_subcentral",
                                                 "G_and_S_transv_frontopol", "G_orbital",
                                                 "S_front_middle", "S_subparietal"};
  return names;
}

/// In-memory synthetic dataset; deterministic in `spec.seed`.
inline Dataset synth_dataset(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t de = spec.embed_dim;

  const auto words = pseudo_words(spec.vocab_size);
  Tensor embed({spec.vocab_size, de});
  for (auto& v : embed.data()) v = gauss(rng);

  const double proj_scale = 1.0 / std::sqrt(static_cast<double>(de));
  Tensor lag_proj({spec.voxels, de});
  for (auto& v : lag_proj.data()) v = proj_scale * gauss(rng);

  std::vector<std::size_t> order(spec.voxels);
  for (std::size_t i = 0; i < spec.voxels; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t nb = spec.bpc_voxels();
  std::vector<std::size_t> bpc(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(nb));
  std::vector<std::size_t> other(order.begin() + static_cast<std::ptrdiff_t>(nb), order.end());
  std::sort(bpc.begin(), bpc.end());
  std::sort(other.begin(), other.end());

  Tensor future_proj({nb, de});
  for (auto& v : future_proj.data()) v = proj_scale * gauss(rng);

  Dataset ds;
  ds.tr_seconds = spec.tr_seconds;
  ds.atlas = RoiAtlas(spec.voxels);
  auto split_regions = [&](const std::vector<std::size_t>& vox, const std::vector<std::string>& names,
                           const std::string& group) {
    const std::size_t n = names.size();
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t lo = vox.size() * r / n, hi = vox.size() * (r + 1) / n;
      ds.atlas.add_region(names[r], {vox.begin() + static_cast<std::ptrdiff_t>(lo),
                                     vox.begin() + static_cast<std::ptrdiff_t>(hi)});
    }
    ds.atlas.add_group(group, names);
  };
  split_regions(bpc, synth_bpc_region_names(), "BPC");
  split_regions(other, synth_other_region_names(), "NonBPC");

  std::vector<double> zipf(spec.vocab_size);
  for (std::size_t r = 0; r < spec.vocab_size; ++r)
    zipf[r] = std::pow(static_cast<double>(r + 1), -spec.zipf_exponent);
  std::discrete_distribution<std::size_t> draw_word(zipf.begin(), zipf.end());
  std::uniform_int_distribution<std::size_t> draw_count(spec.words_min, spec.words_max);

  struct Story {
    std::string name;
    FrameWords frames;
    std::vector<std::size_t> ids;
  };
  std::vector<Story> stories(spec.stories);
  for (std::size_t s = 0; s < spec.stories; ++s) {
    auto& st = stories[s];
    st.name = "story-" + std::string(s < 10 ? "0" : "") + std::to_string(s);
    st.frames.resize(spec.frames_per_story);
    for (auto& f : st.frames) {
      const std::size_t n = draw_count(rng);
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t id = draw_word(rng);
        st.ids.push_back(id);
        f.push_back(words[id]);
      }
    }
  }

  auto mean_embedding = [&](const std::vector<std::size_t>& ids, std::size_t lo, std::size_t hi) {
    std::vector<double> m(de, 0.0);
    hi = std::min(hi, ids.size());
    if (lo >= hi) return m;
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t c = 0; c < de; ++c) m[c] += embed(ids[i], c);
    for (auto& v : m) v /= static_cast<double>(hi - lo);
    return m;
  };
  auto dot = [de](const double* a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t c = 0; c < de; ++c) s += a[c] * b[c];
    return s;
  };

  const std::size_t frames = spec.frames_per_story;
  for (std::size_t subj = 0; subj < spec.subjects; ++subj) {
    const std::string subject = "sub-" + std::string(subj + 1 < 10 ? "0" : "") + std::to_string(subj + 1);
    for (const auto& st : stories) {
      const auto anchors = frame_anchors(st.frames);
      std::vector<std::size_t> frame_start(frames + 1, 0);
      for (std::size_t t = 0; t < frames; ++t) frame_start[t + 1] = frame_start[t] + st.frames[t].size();

      Tensor y({spec.voxels, frames});
      for (std::size_t t = 0; t < frames; ++t) {
        std::vector<double> heard(de, 0.0);
        if (t >= spec.lag) heard = mean_embedding(st.ids, frame_start[t - spec.lag], frame_start[t - spec.lag + 1]);
        const std::size_t f0 = anchors[t] + spec.planted.distance;
        const auto ahead = mean_embedding(st.ids, f0, f0 + spec.planted.length);
        for (std::size_t v = 0; v < spec.voxels; ++v) y(v, t) = dot(&lag_proj(v, 0), heard);
        for (std::size_t b = 0; b < nb; ++b) y(bpc[b], t) += dot(&future_proj(b, 0), ahead);
      }
      for (auto& v : y.data()) v += spec.noise * gauss(rng);

      Recording rec;
      rec.subject = subject;
      rec.story = st.name;
      rec.tr_seconds = spec.tr_seconds;
      rec.frame_words = st.frames;
      if (spec.volume_shape.empty()) {
        rec.layout = Layout::Surface;
        rec.fmri = std::move(y);
      } else {
        rec.layout = Layout::Volume;
        rec.fmri = y.reshaped({spec.volume_shape[0], spec.volume_shape[1], spec.volume_shape[2], frames});
      }
      ds.recordings.push_back(std::move(rec));
    }
  }
  ds.lexicon.emplace(words, embed);
  ds.validate();
  return ds;
}

/// Generates the dataset and writes it to `dir` (staged, then renamed).
inline Dataset synth_generate(const SynthSpec& spec, const std::filesystem::path& dir) {
  Dataset ds = synth_dataset(spec);
  io::StagedDir out(dir);
  save_dataset(ds, out.path());
  io::write_json(out.path() / "synth.json", spec.to_json());
  out.commit();
  return ds;
}

}  // namespace predft::data
