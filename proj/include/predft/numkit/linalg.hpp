#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "predft/numkit/ops.hpp"
#include "predft/numkit/tensor.hpp"

namespace predft::numkit {

/// Cholesky breakdown: the leading minor ending at `pivot` is not positive.
class NotPositiveDefinite : public NumericError {
 public:
  explicit NotPositiveDefinite(std::size_t pivot)
      : NumericError("solve_spd: matrix is not positive definite (pivot " +
                     std::to_string(pivot) + ")"),
        pivot_(pivot) {}
  std::size_t pivot() const { return pivot_; }

 private:
  std::size_t pivot_;
};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
inline Tensor cholesky(const Tensor& a) {
  detail::require_rank(a, 2, "cholesky");
  const std::size_t n = a.rows();
  if (a.cols() != n) throw ShapeError("cholesky: matrix must be square");
  const double tol = 1e-12 * std::max(1.0, max_abs(a));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol) {
        throw ValidationError("cholesky: matrix is not symmetric at (" + std::to_string(i) + "," +
                              std::to_string(j) + ")");
      }
  Tensor l({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) throw NotPositiveDefinite(j);
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

/// Solves a·x = b for symmetric positive definite a[n×n], b[n×m].
inline Tensor solve_spd(const Tensor& a, const Tensor& b) {
  detail::require_rank(b, 2, "solve_spd");
  if (b.rows() != a.rows()) throw ShapeError("solve_spd: right-hand side has wrong row count");
  const Tensor l = cholesky(a);
  const std::size_t n = a.rows(), m = b.cols();
  Tensor y = b;
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = y(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y(k, c);
      y(i, c) = s / l(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = y(i, c);
      for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * y(k, c);
      y(i, c) = s / l(i, i);
    }
  }
  y.require_finite("solve_spd");
  return y;
}

/// Column means of an n×p matrix.
inline std::vector<double> column_means(const Tensor& x) {
  detail::require_rank(x, 2, "column_means");
  std::vector<double> mu(x.cols(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) mu[j] += x(i, j);
  for (double& v : mu) v /= static_cast<double>(x.rows());
  return mu;
}

inline Tensor subtract_row(const Tensor& x, const std::vector<double>& mu) {
  Tensor c = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) c(i, j) -= mu[j];
  return c;
}

/// Fitted principal-component projection.
struct PcaModel {
  std::vector<double> mean;         ///< column means of the fitting data
  Tensor projection;                ///< p×k, orthonormal columns
  std::vector<double> explained_variance;  ///< decreasing, length k

  /// Centers with the fitted means and projects: n×p -> n×k.
  Tensor transform(const Tensor& x) const {
    if (x.rank() != 2 || x.cols() != mean.size()) {
      throw ShapeError("PcaModel::transform: expected " + std::to_string(mean.size()) +
                       " columns, got " + shape_string(x.shape()));
    }
    return matmul(subtract_row(x, mean), projection);
  }
};

struct PcaResult {
  PcaModel model;
  Tensor reduced;  ///< n×k scores of the fitting data
};

/// Principal components of x[n×p] via SVD of the column-centered matrix.
/// Each component's sign is fixed so its largest-magnitude loading is
/// positive.
inline PcaResult pca_reduce(const Tensor& x, std::size_t k) {
  detail::require_rank(x, 2, "pca_reduce");
  const std::size_t n = x.rows(), p = x.cols();
  if (k == 0 || k > std::min(n, p)) {
    throw ValidationError("pca_reduce: k=" + std::to_string(k) + " must be in [1, " +
                          std::to_string(std::min(n, p)) + "]");
  }
  if (n < 2) throw ValidationError("pca_reduce: need at least two rows");
  PcaResult out;
  out.model.mean = column_means(x);
  const Tensor centered = subtract_row(x, out.model.mean);
  if (max_abs(centered) <= 1e-12 * max_abs(x)) throw ValidationError("pca_reduce: input is constant");

  const detail::RowMat cm = detail::as_mat(centered, n, p);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(cm, Eigen::ComputeThinV);
  const Eigen::MatrixXd& v = svd.matrixV();
  const Eigen::VectorXd& s = svd.singularValues();

  out.model.projection = Tensor({p, k});
  for (std::size_t c = 0; c < k; ++c) {
    Eigen::Index arg = 0;
    v.col(static_cast<Eigen::Index>(c)).cwiseAbs().maxCoeff(&arg);
    const double sign = v(arg, static_cast<Eigen::Index>(c)) < 0.0 ? -1.0 : 1.0;
    for (std::size_t r = 0; r < p; ++r) {
      out.model.projection(r, c) =
          sign * v(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    }
    const double sv = s(static_cast<Eigen::Index>(c));
    out.model.explained_variance.push_back(sv * sv / static_cast<double>(n - 1));
  }
  out.reduced = matmul(centered, out.model.projection);
  return out;
}

/// Pearson correlation of matching columns. Columns where either side has
/// zero variance yield 0.
inline std::vector<double> pearson_columns(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "pearson_columns");
  a.require_same_shape(b, "pearson_columns");
  const std::size_t n = a.rows(), v = a.cols();
  if (n < 2) throw ValidationError("pearson_columns: need at least two rows");
  const std::vector<double> ma = column_means(a);
  const std::vector<double> mb = column_means(b);
  std::vector<double> sab(v, 0.0), saa(v, 0.0), sbb(v, 0.0), raw_a(v, 0.0), raw_b(v, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < v; ++j) {
      const double da = a(i, j) - ma[j];
      const double db = b(i, j) - mb[j];
      sab[j] += da * db;
      saa[j] += da * da;
      sbb[j] += db * db;
      raw_a[j] += a(i, j) * a(i, j);
      raw_b[j] += b(i, j) * b(i, j);
    }
  // A constant column leaves only rounding residue after centering.
  constexpr double kResidue = 1e-24;
  std::vector<double> r(v, 0.0);
  for (std::size_t j = 0; j < v; ++j) {
    if (saa[j] <= kResidue * raw_a[j] || sbb[j] <= kResidue * raw_b[j]) continue;
    r[j] = std::clamp(sab[j] / std::sqrt(saa[j] * sbb[j]), -1.0, 1.0);
  }
  return r;
}

}  // namespace predft::numkit
