#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <random>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "predft/data/recording.hpp"
#include "predft/error.hpp"

namespace predft::data {

/// Named voxel regions plus named unions of regions.
///
/// Besides the stored groups two names resolve dynamically:
///   "Whole"           every voxel, identity order
///   "Random(seed,n)"  n distinct voxels drawn uniformly with that seed
/// A bare region name also resolves to that region.
class RoiAtlas {
 public:
  RoiAtlas() = default;
  explicit RoiAtlas(std::size_t voxel_count) : voxel_count_(voxel_count) {}

  std::size_t voxel_count() const { return voxel_count_; }
  void set_voxel_count(std::size_t n) { voxel_count_ = n; }

  const std::map<std::string, std::vector<std::size_t>>& regions() const { return regions_; }
  const std::map<std::string, std::vector<std::string>>& groups() const { return groups_; }

  void add_region(const std::string& name, std::vector<std::size_t> voxels) {
    if (name == "groups" || name == "Whole") throw ValidationError("reserved region name '" + name + "'");
    std::sort(voxels.begin(), voxels.end());
    if (std::adjacent_find(voxels.begin(), voxels.end()) != voxels.end()) {
      throw ValidationError("region '" + name + "' lists a voxel twice");
    }
    regions_[name] = std::move(voxels);
  }

  void add_group(const std::string& name, std::vector<std::string> region_names) {
    groups_[name] = std::move(region_names);
  }

  void validate() const {
    for (const auto& [name, vox] : regions_) {
      if (vox.empty()) throw ValidationError("region '" + name + "' is empty");
      if (vox.back() >= voxel_count_) {
        throw ValidationError("region '" + name + "' index " + std::to_string(vox.back()) +
                              " outside " + std::to_string(voxel_count_) + " voxels");
      }
    }
    for (const auto& [name, regs] : groups_)
      for (const auto& r : regs)
        if (!regions_.count(r)) {
          throw ValidationError("group '" + name + "' refers to unknown region '" + r + "'");
        }
  }

  /// Sorted, duplicate-free voxel indices for a group name.
  std::vector<std::size_t> resolve(const std::string& group) const {
    if (group == "Whole") {
      std::vector<std::size_t> all(voxel_count_);
      for (std::size_t i = 0; i < voxel_count_; ++i) all[i] = i;
      return all;
    }
    static const std::regex random_re(R"(Random\((\d+),(\d+)\))");
    std::smatch m;
    if (std::regex_match(group, m, random_re)) {
      return random_voxels(std::stoull(m[1].str()), std::stoull(m[2].str()));
    }
    std::vector<std::size_t> out;
    if (auto g = groups_.find(group); g != groups_.end()) {
      for (const auto& r : g->second) {
        const auto& v = regions_.at(r);
        out.insert(out.end(), v.begin(), v.end());
      }
    } else if (auto r = regions_.find(group); r != regions_.end()) {
      out = r->second;
    } else {
      throw ValidationError("unknown ROI group '" + group + "'");
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    if (out.empty()) throw ValidationError("ROI group '" + group + "' is empty");
    for (std::size_t v : out)
      if (v >= voxel_count_) throw ValidationError("ROI index out of range in '" + group + "'");
    return out;
  }

  std::vector<std::size_t> random_voxels(std::uint64_t seed, std::size_t n) const {
    if (n == 0 || n > voxel_count_) {
      throw ValidationError("Random ROI size " + std::to_string(n) + " outside [1, " +
                            std::to_string(voxel_count_) + "]");
    }
    std::vector<std::size_t> all(voxel_count_);
    for (std::size_t i = 0; i < voxel_count_; ++i) all[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(n);
    std::sort(all.begin(), all.end());
    return all;
  }

  /// {"<region>": [indices], ..., "groups": {"<group>": ["<region>", ...]}}
  nlohmann::json to_json() const {
    nlohmann::json j = regions_;
    j["groups"] = groups_;
    return j;
  }

  static RoiAtlas from_json(const nlohmann::json& j, std::size_t voxel_count) {
    if (!j.is_object()) throw ValidationError("atlas must be a JSON object");
    RoiAtlas a(voxel_count);
    for (const auto& [name, v] : j.items()) {
      if (name == "groups") continue;
      a.add_region(name, v.get<std::vector<std::size_t>>());
    }
    if (j.contains("groups"))
      for (const auto& [name, v] : j.at("groups").items())
        a.add_group(name, v.get<std::vector<std::string>>());
    a.validate();
    return a;
  }

 private:
  std::size_t voxel_count_ = 0;
  std::map<std::string, std::vector<std::size_t>> regions_;
  std::map<std::string, std::vector<std::string>> groups_;
};

/// frames×d_r matrix of the group's voxels, columns in sorted index order.
inline Tensor extract_rois(const Tensor& voxels_by_frames, const std::vector<std::size_t>& indices) {
  if (voxels_by_frames.rank() != 2) throw ShapeError("extract_rois: expected voxels×frames");
  if (indices.empty()) throw ValidationError("extract_rois: empty ROI");
  const std::size_t v = voxels_by_frames.rows(), f = voxels_by_frames.cols();
  Tensor out({f, indices.size()});
  for (std::size_t c = 0; c < indices.size(); ++c) {
    if (indices[c] >= v) throw ValidationError("extract_rois: voxel index out of range");
    for (std::size_t t = 0; t < f; ++t) out(t, c) = voxels_by_frames(indices[c], t);
  }
  return out;
}

inline Tensor extract_rois(const Tensor& voxels_by_frames, const RoiAtlas& atlas,
                           const std::string& group) {
  return extract_rois(voxels_by_frames, atlas.resolve(group));
}

}  // namespace predft::data
