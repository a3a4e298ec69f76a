#pragma once

// Prediction-score surfaces over a (d, l) grid, one per ROI set.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "predft/align/activations.hpp"
#include "predft/align/ridge.hpp"
#include "predft/data/preprocess.hpp"
#include "predft/io.hpp"
#include "predft/numkit/linalg.hpp"
#include "predft/numkit/ops.hpp"
#include "predft/parallel.hpp"

namespace predft::align {

/// One story's word activations paired with its frames×voxels responses.
struct SweepStory {
  ActivationTable table;
  Tensor responses;
};

struct RoiSet {
  std::string name;
  std::vector<std::size_t> voxels;
};

struct SweepSpec {
  std::vector<std::size_t> d_values;
  std::vector<std::size_t> l_values;
  RidgeSpec ridge;
  std::size_t reduced_dim = 20;
};

struct SurfaceCell {
  std::size_t d = 0;
  std::size_t l = 0;
  double score = 0.0;
  double fold_std = 0.0;
};

struct ScoreSurface {
  std::string roi_set;
  std::vector<std::size_t> d_values;
  std::vector<std::size_t> l_values;
  std::vector<SurfaceCell> cells;  ///< d-major: cells[di * |l| + li]
  double base_score = 0.0;

  const SurfaceCell& at(std::size_t di, std::size_t li) const { return cells.at(di * l_values.size() + li); }

  /// d with the highest score at the given l value.
  std::size_t argmax_d(std::size_t l) const {
    const auto li = static_cast<std::size_t>(std::find(l_values.begin(), l_values.end(), l) - l_values.begin());
    if (li == l_values.size()) throw ValidationError("surface has no l=" + std::to_string(l));
    std::size_t best = 0;
    for (std::size_t di = 1; di < d_values.size(); ++di)
      if (at(di, li).score > at(best, li).score) best = di;
    return d_values.at(best);
  }
};

/// Inclusive integer range "lo:hi" (or a single value).
inline std::vector<std::size_t> parse_range(const std::string& text) {
  const auto colon = text.find(':');
  try {
    std::size_t used = 0;
    const std::string lo_s = text.substr(0, colon);
    const long lo = std::stol(lo_s, &used);
    if (used != lo_s.size()) throw std::invalid_argument(text);
    long hi = lo;
    if (colon != std::string::npos) {
      const std::string hi_s = text.substr(colon + 1);
      hi = std::stol(hi_s, &used);
      if (used != hi_s.size()) throw std::invalid_argument(text);
    }
    if (lo < 0 || hi < lo) throw std::invalid_argument(text);
    std::vector<std::size_t> out;
    for (long v = lo; v <= hi; ++v) out.push_back(static_cast<std::size_t>(v));
    return out;
  } catch (const std::logic_error&) {
    throw ValidationError("invalid range '" + text + "' (expected lo:hi with 0 <= lo <= hi)");
  }
}

/// Voxel-normalized frames×voxels responses and lexicon activations for
/// every story one subject heard.
inline std::vector<SweepStory> sweep_stories(const data::Dataset& ds, const std::string& subject) {
  if (!ds.lexicon) throw ValidationError("dataset has no lexicon to provide word activations");
  std::vector<SweepStory> out;
  for (const auto& r : ds.recordings) {
    if (r.subject != subject) continue;
    const Tensor y = data::voxel_normalize(r.voxel_matrix());
    out.push_back({make_activation_table(r.frame_words, *ds.lexicon), numkit::transpose(y)});
  }
  if (out.empty()) throw ValidationError("no recordings for subject '" + subject + "'");
  return out;
}

namespace detail {

/// Reduced per-word activations for every story, with the PCA fitted on the
/// words of training frames only.
class FoldReducer {
 public:
  FoldReducer(const std::vector<SweepStory>& stories, const RidgeSpec& spec, std::size_t reduced_dim) {
    for (const auto& s : stories) {
      s.table.validate();
      if (s.responses.rank() != 2 || s.responses.rows() != s.table.frames) {
        throw ShapeError("sweep: story responses must have one row per frame");
      }
      offsets_.push_back(total_);
      total_ += s.table.frames;
    }
    const auto bounds = fold_bounds(total_, spec.folds);
    for (const auto& [b, e] : bounds) {
      std::vector<const double*> rows;
      const std::size_t dim = stories.front().table.activations.cols();
      for (std::size_t s = 0; s < stories.size(); ++s) {
        const auto& t = stories[s].table;
        for (std::size_t w = 0; w < t.word_count(); ++w) {
          const std::size_t g = offsets_[s] + t.word_frame[w];
          if (spec.folds == 1 || g < b || g >= e) rows.push_back(t.activations.data().data() + w * dim);
        }
      }
      Tensor fit({rows.size(), dim});
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < dim; ++c) fit(i, c) = rows[i][c];
      const auto model = numkit::pca_reduce(fit, reduced_dim).model;
      std::vector<ActivationTable> reduced;
      for (const auto& s : stories) reduced.push_back(s.table.with_activations(model.transform(s.table.activations)));
      per_fold_.push_back(std::move(reduced));
    }
    responses_ = Tensor({total_, stories.front().responses.cols()});
    for (std::size_t s = 0; s < stories.size(); ++s) {
      if (stories[s].responses.cols() != responses_.cols()) throw ShapeError("sweep: voxel counts differ");
      for (std::size_t t = 0; t < stories[s].table.frames; ++t)
        for (std::size_t v = 0; v < responses_.cols(); ++v) responses_(offsets_[s] + t, v) = stories[s].responses(t, v);
    }
  }

  const Tensor& responses() const { return responses_; }

  Tensor base(std::size_t fold) const {
    return stack([&](const ActivationTable& t) { return select_frame_activations(t); }, fold);
  }

  Tensor future(std::size_t fold, PredictionWindow w, std::size_t reduced_dim) const {
    return stack([&](const ActivationTable& t) { return build_future_features(t, w, reduced_dim); }, fold);
  }

 private:
  template <typename Fn>
  Tensor stack(Fn&& fn, std::size_t fold) const {
    std::vector<Tensor> parts;
    for (const auto& t : per_fold_.at(fold)) parts.push_back(fn(t));
    Tensor out({total_, parts.front().cols()});
    for (std::size_t s = 0; s < parts.size(); ++s)
      for (std::size_t i = 0; i < parts[s].rows(); ++i)
        for (std::size_t c = 0; c < parts[s].cols(); ++c) out(offsets_[s] + i, c) = parts[s](i, c);
    return out;
  }

  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
  std::vector<std::vector<ActivationTable>> per_fold_;
  Tensor responses_;
};

inline Tensor take_columns(const Tensor& y, const std::vector<std::size_t>& cols) {
  Tensor out({y.rows(), cols.size()});
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (cols[c] >= y.cols()) throw ValidationError("sweep: ROI voxel index out of range");
    for (std::size_t i = 0; i < y.rows(); ++i) out(i, c) = y(i, cols[c]);
  }
  return out;
}

}  // namespace detail

/// Prediction score for every (d, l) cell and ROI set. Stories are stacked
/// in order; the per-word PCA is refitted inside every outer fold.
inline std::vector<ScoreSurface> score_sweep(const std::vector<SweepStory>& stories,
                                             const std::vector<RoiSet>& roi_sets, const SweepSpec& spec) {
  if (stories.empty()) throw ValidationError("sweep: no stories");
  spec.ridge.validate();
  const detail::FoldReducer reducer(stories, spec.ridge, spec.reduced_dim);
  const std::size_t nd = spec.d_values.size(), nl = spec.l_values.size();

  std::vector<ScoreSurface> out;
  for (const auto& roi : roi_sets) {
    if (roi.voxels.empty()) throw ValidationError("sweep: ROI set '" + roi.name + "' is empty");
    const Tensor y = detail::take_columns(reducer.responses(), roi.voxels);
    const BrainScore base =
        brain_score([&](std::size_t f) { return reducer.base(f); }, y, spec.ridge);
    ScoreSurface s;
    s.roi_set = roi.name;
    s.d_values = spec.d_values;
    s.l_values = spec.l_values;
    s.base_score = base.score;
    s.cells.resize(nd * nl);
    parallel_for(nd * nl, [&](std::size_t c) {
      const PredictionWindow w{spec.d_values[c / nl], spec.l_values[c % nl]};
      const BrainScore aug = brain_score(
          [&](std::size_t f) { return concat_columns(reducer.base(f), reducer.future(f, w, spec.reduced_dim)); },
          y, spec.ridge);
      const auto p = prediction_score_from(base, aug);
      s.cells[c] = {w.distance, w.length, p.score, p.fold_std};
    });
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string surfaces_csv(const std::vector<ScoreSurface>& surfaces) {
  std::string csv = "d,l,roi_set,score,fold_std\n";
  for (const auto& s : surfaces)
    for (const auto& c : s.cells) {
      csv += std::to_string(c.d) + "," + std::to_string(c.l) + "," + s.roi_set + "," + io::format_double(c.score) +
             "," + io::format_double(c.fold_std) + "\n";
    }
  return csv;
}

/// Line chart of score against d, one polyline per l.
inline std::string surface_svg(const ScoreSurface& s) {
  constexpr double W = 640, H = 400, L = 60, R = 110, T = 30, B = 50;
  static const char* const palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
                                        "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  double lo = 0.0, hi = 0.0;
  for (const auto& c : s.cells) {
    lo = std::min(lo, c.score);
    hi = std::max(hi, c.score);
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const double dmin = static_cast<double>(s.d_values.front()), dmax = static_cast<double>(s.d_values.back());
  auto px = [&](double d) { return L + (dmax > dmin ? (d - dmin) / (dmax - dmin) : 0.5) * (W - L - R); };
  auto py = [&](double v) { return T + (hi - v) / (hi - lo) * (H - T - B); };
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 "
     << W << ' ' << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">prediction score, "
     << s.roi_set << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << num(py(0.0)) << "\" x2=\"" << W - R << "\" y2=\"" << num(py(0.0))
     << "\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 3\"/>\n";
  for (std::size_t d : s.d_values)
    os << "<text x=\"" << num(px(static_cast<double>(d))) << "\" y=\"" << H - B + 16
       << "\" text-anchor=\"middle\" font-size=\"11\">" << d << "</text>\n";
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">d</text>\n";
  os << "<text x=\"" << L - 6 << "\" y=\"" << T + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << num(hi) << "</text>\n";
  os << "<text x=\"" << L - 6 << "\" y=\"" << H - B << "\" text-anchor=\"end\" font-size=\"11\">" << num(lo) << "</text>\n";
  for (std::size_t li = 0; li < s.l_values.size(); ++li) {
    const char* color = palette[li % 10];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t di = 0; di < s.d_values.size(); ++di) {
      os << (di ? " " : "") << num(px(static_cast<double>(s.d_values[di]))) << ',' << num(py(s.at(di, li).score));
    }
    os << "\"/>\n";
    const double ly = T + 16.0 * static_cast<double>(li) + 10;
    os << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 32 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - R + 38 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">l=" << s.l_values[li]
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace predft::align
