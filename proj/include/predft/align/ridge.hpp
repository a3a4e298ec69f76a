#pragma once

// Cross-validated ridge regression from features to voxel responses and the
// correlation-based brain and prediction scores built on it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "predft/error.hpp"
#include "predft/numkit/linalg.hpp"
#include "predft/numkit/tensor.hpp"

namespace predft::align {

using numkit::Tensor;

struct RidgeSpec {
  std::vector<double> penalties = log_spaced(1e-1, 1e8, 10);
  std::size_t folds = 10;
  std::size_t inner_folds = 5;  ///< penalty selection inside each training fold

  static std::vector<double> log_spaced(double lo, double hi, std::size_t n) {
    std::vector<double> out(n);
    const double a = std::log10(lo), b = std::log10(hi);
    for (std::size_t i = 0; i < n; ++i)
      out[i] = n == 1 ? lo : std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
    return out;
  }

  /// One penalty and no cross-validation: fit and predict on all rows.
  static RidgeSpec fixed(double penalty) {
    RidgeSpec s;
    s.penalties = {penalty};
    s.folds = 1;
    return s;
  }

  void validate() const {
    if (penalties.empty()) throw ValidationError("ridge: empty penalty grid");
    for (std::size_t i = 0; i < penalties.size(); ++i) {
      if (!(penalties[i] > 0.0)) throw ValidationError("ridge: penalties must be positive");
      if (i > 0 && !(penalties[i] > penalties[i - 1])) throw ValidationError("ridge: penalties must be sorted");
    }
    if (folds < 1) throw ValidationError("ridge: folds must be >= 1");
    if (inner_folds < 2) throw ValidationError("ridge: inner_folds must be >= 2");
  }
};

/// Contiguous [begin, end) blocks; the first n % k blocks get one extra row.
inline std::vector<std::pair<std::size_t, std::size_t>> fold_bounds(std::size_t n, std::size_t k) {
  if (k == 0 || n < k) {
    throw ValidationError("cannot split " + std::to_string(n) + " rows into " + std::to_string(k) + " folds");
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t begin = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = n / k + (f < n % k ? 1 : 0);
    out.emplace_back(begin, begin + len);
    begin += len;
  }
  return out;
}

namespace detail {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline Mat to_eigen(const Tensor& t) {
  Mat m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t(i, j);
  return m;
}

inline Tensor from_eigen(const Mat& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t(i, j) = m(i, j);
  return t;
}

inline Mat take_rows(const Mat& m, const std::vector<std::size_t>& rows) {
  Mat out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = m.row(rows[i]);
  return out;
}

/// Ridge fits on centered data for a whole penalty grid at once, through the
/// eigendecomposition of the centered Gram matrix.
class RidgePath {
 public:
  RidgePath(const Mat& x, const Mat& y) {
    mu_x_ = x.colwise().mean();
    mu_y_ = y.colwise().mean();
    const Mat xc = x.rowwise() - mu_x_.transpose();
    const Mat yc = y.rowwise() - mu_y_.transpose();
    Eigen::SelfAdjointEigenSolver<Mat> eig(xc.transpose() * xc);
    if (eig.info() != Eigen::Success) throw NumericError("ridge: eigendecomposition failed");
    q_ = eig.eigenvectors();
    lambda_ = eig.eigenvalues().cwiseMax(0.0);
    qtxty_ = q_.transpose() * (xc.transpose() * yc);
  }

  /// Predictions for rows `x` under each penalty.
  std::vector<Mat> predict(const Mat& x, const std::vector<double>& penalties) const {
    return predict(x, penalties, mu_x_, mu_y_);
  }

  /// Same slopes, with the intercept taken from the given centers.
  std::vector<Mat> predict(const Mat& x, const std::vector<double>& penalties, const Vec& mu_x,
                           const Vec& mu_y) const {
    const Mat xq = (x.rowwise() - mu_x.transpose()) * q_;
    std::vector<Mat> out;
    out.reserve(penalties.size());
    for (double a : penalties) {
      const Vec scale = (lambda_.array() + a).inverse().matrix();
      Mat p = xq * (scale.asDiagonal() * qtxty_);
      p.rowwise() += mu_y.transpose();
      out.push_back(std::move(p));
    }
    return out;
  }

  Mat weights(double penalty) const {
    const Vec scale = (lambda_.array() + penalty).inverse().matrix();
    return q_ * (scale.asDiagonal() * qtxty_);
  }

 private:
  Vec mu_x_, mu_y_, lambda_;
  Mat q_, qtxty_;
};

/// Penalty with the lowest summed validation MSE over contiguous inner folds.
inline double select_penalty(const Mat& x, const Mat& y, const RidgeSpec& spec) {
  if (spec.penalties.size() == 1) return spec.penalties.front();
  const std::size_t n = static_cast<std::size_t>(x.rows());
  const std::size_t k = std::min(spec.inner_folds, n);
  if (k < 2) return spec.penalties.front();
  std::vector<double> mse(spec.penalties.size(), 0.0);
  for (const auto& [b, e] : fold_bounds(n, k)) {
    std::vector<std::size_t> tr, va;
    for (std::size_t i = 0; i < n; ++i) (i >= b && i < e ? va : tr).push_back(i);
    if (tr.size() < 2) continue;
    const RidgePath path(take_rows(x, tr), take_rows(y, tr));
    const Mat yv = take_rows(y, va);
    const auto preds = path.predict(take_rows(x, va), spec.penalties);
    for (std::size_t a = 0; a < preds.size(); ++a) mse[a] += (preds[a] - yv).squaredNorm();
  }
  return spec.penalties[static_cast<std::size_t>(std::min_element(mse.begin(), mse.end()) - mse.begin())];
}

inline bool is_constant_matrix(const Tensor& x) {
  const double scale = numkit::max_abs(x);
  if (scale == 0.0) return true;
  const auto mu = numkit::column_means(x);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j)
      if (std::abs(x(i, j) - mu[j]) > 1e-12 * scale) return false;
  return true;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace detail

struct BrainScore {
  double score = 0.0;                ///< mean over voxels of voxel_r
  std::vector<double> voxel_r;       ///< Pearson r on concatenated held-out predictions
  Tensor predictions;                ///< N×V held-out predictions
  std::vector<double> fold_scores;   ///< voxel-mean r within each fold's rows
  std::vector<double> penalties;     ///< penalty chosen per fold
};

/// Features for outer fold `k` (all N rows), allowing fold-dependent
/// preprocessing fitted on that fold's training rows.
using FoldFeatures = std::function<Tensor(std::size_t fold)>;

/// Cross-validated brain score with per-fold feature construction. Held-out
/// rows are predicted around the full-sample feature and response means, so
/// fold-to-fold intercept drift does not leak into the correlation.
inline BrainScore brain_score(const FoldFeatures& features, const Tensor& responses, const RidgeSpec& spec) {
  spec.validate();
  if (responses.rank() != 2) throw ShapeError("brain_score: responses must be frames×voxels");
  const std::size_t n = responses.rows(), v = responses.cols();
  const auto bounds = fold_bounds(n, spec.folds);
  const detail::Mat y = detail::to_eigen(responses);
  const detail::Vec mu_y = y.colwise().mean();
  detail::Mat pred(n, v);
  BrainScore out;
  for (std::size_t f = 0; f < bounds.size(); ++f) {
    const Tensor xt = features(f);
    if (xt.rank() != 2 || xt.rows() != n) {
      throw ShapeError("brain_score: features have " + numkit::shape_string(xt.shape()) + " for " +
                       std::to_string(n) + " response rows");
    }
    if (detail::is_constant_matrix(xt)) throw ValidationError("brain_score: zero-variance feature matrix");
    const detail::Mat x = detail::to_eigen(xt);
    const auto [b, e] = bounds[f];
    std::vector<std::size_t> tr, te;
    for (std::size_t i = 0; i < n; ++i) (spec.folds == 1 || i < b || i >= e ? tr : te).push_back(i);
    if (spec.folds == 1) te = tr;
    const detail::Mat xtr = detail::take_rows(x, tr), ytr = detail::take_rows(y, tr);
    const double alpha = detail::select_penalty(xtr, ytr, spec);
    out.penalties.push_back(alpha);
    const detail::RidgePath path(xtr, ytr);
    const detail::Vec mu_x = x.colwise().mean();
    const detail::Mat p = path.predict(detail::take_rows(x, te), {alpha}, mu_x, mu_y).front();
    for (std::size_t i = 0; i < te.size(); ++i) pred.row(te[i]) = p.row(i);
    if (te.size() >= 2) {
      out.fold_scores.push_back(detail::mean_of(
          numkit::pearson_columns(detail::from_eigen(p), detail::from_eigen(detail::take_rows(y, te)))));
    }
  }
  out.predictions = detail::from_eigen(pred);
  out.voxel_r = numkit::pearson_columns(out.predictions, responses);
  out.score = detail::mean_of(out.voxel_r);
  return out;
}

inline BrainScore brain_score(const Tensor& features, const Tensor& responses, const RidgeSpec& spec) {
  return brain_score([&](std::size_t) { return features; }, responses, spec);
}

inline Tensor concat_columns(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_columns: " + numkit::shape_string(a.shape()) + " vs " +
                     numkit::shape_string(b.shape()));
  }
  Tensor out({a.rows(), a.cols() + b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j) out(i, a.cols() + j) = b(i, j);
  }
  return out;
}

struct PredictionScore {
  double score = 0.0;  ///< R(base ⊕ future) − R(base)
  double fold_std = 0.0;
  std::vector<double> fold_scores;  ///< per-fold difference
  BrainScore base;
  BrainScore augmented;
};

inline PredictionScore prediction_score_from(const BrainScore& base, const BrainScore& augmented) {
  PredictionScore p;
  p.base = base;
  p.augmented = augmented;
  p.score = augmented.score - base.score;
  for (std::size_t f = 0; f < std::min(base.fold_scores.size(), augmented.fold_scores.size()); ++f)
    p.fold_scores.push_back(augmented.fold_scores[f] - base.fold_scores[f]);
  const double mu = detail::mean_of(p.fold_scores);
  double var = 0.0;
  for (double s : p.fold_scores) var += (s - mu) * (s - mu);
  p.fold_std = p.fold_scores.empty() ? 0.0 : std::sqrt(var / static_cast<double>(p.fold_scores.size()));
  return p;
}

inline PredictionScore prediction_score(const Tensor& base, const Tensor& future, const Tensor& responses,
                                        const RidgeSpec& spec) {
  if (base.rows() != responses.rows() || future.rows() != responses.rows()) {
    throw ShapeError("prediction_score: row mismatch between features and responses");
  }
  return prediction_score_from(brain_score(base, responses, spec),
                               brain_score(concat_columns(base, future), responses, spec));
}

/// Brain score restricted to the given voxel columns.
inline BrainScore roi_score(const Tensor& features, const Tensor& responses,
                            const std::vector<std::size_t>& roi, const RidgeSpec& spec) {
  if (roi.empty()) throw ValidationError("roi_score: empty ROI");
  std::vector<std::size_t> sorted = roi;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ValidationError("roi_score: duplicate voxel index");
  }
  Tensor y({responses.rows(), roi.size()});
  for (std::size_t c = 0; c < roi.size(); ++c) {
    if (roi[c] >= responses.cols()) throw ValidationError("roi_score: voxel index out of range");
    for (std::size_t i = 0; i < responses.rows(); ++i) y(i, c) = responses(i, roi[c]);
  }
  return brain_score(features, y, spec);
}

}  // namespace predft::align
