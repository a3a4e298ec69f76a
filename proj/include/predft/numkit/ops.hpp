#pragma once

// Differentiable primitives. Every op validates its inputs, computes the
// forward value and records an adjoint on the inputs' tape.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "predft/numkit/tape.hpp"
#include "predft/numkit/tensor.hpp"

namespace predft::numkit {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline ConstMatMap as_mat(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}
inline MatMap as_mat(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

inline Tape& same_tape(const Var& a, const Var& b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw ValidationError(std::string(op) + ": operands live on different tapes");
  }
  return *a.tape;
}

inline void add_into(Tensor* dst, const Tensor& src) {
  if (dst != nullptr) *dst += src;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Plain (tape-free) kernels. The differentiable ops below are built on these.
// ---------------------------------------------------------------------------

/// c = a·b for a[m×k], b[k×n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner extents differ " + shape_string(a.shape()) + " · " +
                     shape_string(b.shape()));
  }
  Tensor c({a.rows(), b.cols()});
  detail::as_mat(c, a.rows(), b.cols()).noalias() =
      detail::as_mat(a, a.rows(), a.cols()) * detail::as_mat(b, b.rows(), b.cols());
  return c;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// ---------------------------------------------------------------------------
// Differentiable ops.
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
  Tape& tape = detail::same_tape(a, b, "matmul");
  Tensor c = matmul(a.value(), b.value());
  return tape.record(
      std::move(c), {a.id, b.id},
      [a = a.id, b = b.id](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
        if (Tensor* ga = t.grad_buffer(a)) {
          detail::as_mat(*ga, m, k).noalias() +=
              detail::as_mat(g, m, n) * detail::as_mat(bv, k, n).transpose();
        }
        if (Tensor* gb = t.grad_buffer(b)) {
          detail::as_mat(*gb, k, n).noalias() +=
              detail::as_mat(av, m, k).transpose() * detail::as_mat(g, m, n);
        }
      },
      "matmul");
}

inline Var transpose(Var a) {
  Tensor t = transpose(a.value());
  return a.tape->record(
      std::move(t), {a.id},
      [a = a.id](Tape& tp, std::size_t self) {
        detail::add_into(tp.grad_buffer(a), transpose(tp.grad(self)));
      },
      "transpose");
}

inline Var add(Var a, Var b) {
  Tape& tape = detail::same_tape(a, b, "add");
  a.value().require_same_shape(b.value(), "add");
  Tensor c = a.value();
  c += b.value();
  return tape.record(
      std::move(c), {a.id, b.id},
      [a = a.id, b = b.id](Tape& t, std::size_t self) {
        detail::add_into(t.grad_buffer(a), t.grad(self));
        detail::add_into(t.grad_buffer(b), t.grad(self));
      },
      "add");
}

inline Var scale(Var a, double s) {
  Tensor c = a.value();
  c *= s;
  return a.tape->record(
      std::move(c), {a.id},
      [a = a.id, s](Tape& t, std::size_t self) {
        if (Tensor* ga = t.grad_buffer(a)) {
          const Tensor& g = t.grad(self);
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
        }
      },
      "scale");
}

/// x[m×n] + bias broadcast over rows; bias has n elements (any shape).
inline Var add_row(Var x, Var bias) {
  Tape& tape = detail::same_tape(x, bias, "add_row");
  const Tensor& xv = x.value();
  detail::require_rank(xv, 2, "add_row");
  const std::size_t m = xv.rows(), n = xv.cols();
  if (bias.value().size() != n) {
    throw ShapeError("add_row: bias of size " + std::to_string(bias.value().size()) +
                     " for width " + std::to_string(n));
  }
  Tensor c = xv;
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c(i, j) += bv[j];
  return tape.record(
      std::move(c), {x.id, bias.id},
      [x = x.id, bias = bias.id, m, n](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        detail::add_into(t.grad_buffer(x), g);
        if (Tensor* gb = t.grad_buffer(bias)) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) (*gb)[j] += g[i * n + j];
        }
      },
      "add_row");
}

inline Var relu(Var x) {
  Tensor y = x.value();
  for (double& v : y.storage()) v = v > 0.0 ? v : 0.0;
  return x.tape->record(
      std::move(y), {x.id},
      [x = x.id](Tape& t, std::size_t self) {
        if (Tensor* gx = t.grad_buffer(x)) {
          const Tensor& g = t.grad(self);
          const Tensor& xv = t.value(x);
          for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > 0.0) (*gx)[i] += g[i];
        }
      },
      "relu");
}

/// Elementwise product with a constant tensor of the same shape (dropout masks).
inline Var multiply_const(Var x, const Tensor& factor) {
  if (factor.shape() != x.value().shape()) throw ShapeError("multiply_const: shape mismatch");
  Tensor y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= factor[i];
  return x.tape->record(
      std::move(y), {x.id},
      [x = x.id, factor](Tape& t, std::size_t self) {
        if (Tensor* gx = t.grad_buffer(x)) {
          const Tensor& g = t.grad(self);
          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * factor[i];
        }
      },
      "multiply_const");
}

inline Var reshape(Var x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return x.tape->record(
      std::move(y), {x.id},
      [x = x.id](Tape& t, std::size_t self) {
        if (Tensor* gx = t.grad_buffer(x)) {
          const Tensor& g = t.grad(self);
          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
        }
      },
      "reshape");
}

/// Same value, no gradient flow back into `x`.
inline Var detach(Var x) { return x.tape->constant(x.value()); }

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->record(
      Tensor::scalar(s), {x.id},
      [x = x.id](Tape& t, std::size_t self) {
        if (Tensor* gx = t.grad_buffer(x)) {
          const double g = t.grad(self)[0];
          for (double& v : gx->storage()) v += g;
        }
      },
      "sum");
}

inline Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Columns [begin, begin+count) of a matrix.
inline Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  detail::require_rank(xv, 2, "slice_cols");
  if (count == 0 || begin + count > xv.cols()) throw ShapeError("slice_cols: range out of bounds");
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor y({m, count});
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(xv.data().begin() + i * n + begin, count, y.data().begin() + i * count);
  return x.tape->record(
      std::move(y), {x.id},
      [x = x.id, begin, count, m, n](Tape& t, std::size_t self) {
        if (Tensor* gx = t.grad_buffer(x)) {
          const Tensor& g = t.grad(self);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < count; ++j) (*gx)[i * n + begin + j] += g[i * count + j];
        }
      },
      "slice_cols");
}

/// Rows [begin, begin+count) of a matrix.
inline Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  detail::require_rank(xv, 2, "slice_rows");
  if (count == 0 || begin + count > xv.rows()) throw ShapeError("slice_rows: range out of bounds");
  const std::size_t n = xv.cols();
  Tensor y({count, n}, std::vector<double>(xv.data().begin() + begin * n,
                                           xv.data().begin() + (begin + count) * n));
  return x.tape->record(
      std::move(y), {x.id},
      [x = x.id, begin, count, n](Tape& t, std::size_t self) {
        if (Tensor* gx = t.grad_buffer(x)) {
          const Tensor& g = t.grad(self);
          for (std::size_t i = 0; i < count * n; ++i) (*gx)[begin * n + i] += g[i];
        }
      },
      "slice_rows");
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts.front().value().rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (const Var& p : parts) {
    detail::require_rank(p.value(), 2, "concat_cols");
    if (p.value().rows() != m) throw ShapeError("concat_cols: row counts differ");
    if (p.tape != parts.front().tape) throw ValidationError("concat_cols: mixed tapes");
    ids.push_back(p.id);
    widths.push_back(p.value().cols());
    total += p.value().cols();
  }
  Tensor y({m, total});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    const std::size_t w = pv.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(pv.data().begin() + i * w, w, y.data().begin() + i * total + off);
    off += w;
  }
  return parts.front().tape->record(
      std::move(y), ids,
      [ids, widths, m, total](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        std::size_t off = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
          const std::size_t w = widths[p];
          if (Tensor* gp = t.grad_buffer(ids[p])) {
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < w; ++j) (*gp)[i * w + j] += g[i * total + off + j];
          }
          off += w;
        }
      },
      "concat_cols");
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts.front().value().cols();
  std::size_t total = 0;
  std::vector<std::size_t> ids, sizes;
  std::vector<double> data;
  for (const Var& p : parts) {
    detail::require_rank(p.value(), 2, "concat_rows");
    if (p.value().cols() != n) throw ShapeError("concat_rows: column counts differ");
    if (p.tape != parts.front().tape) throw ValidationError("concat_rows: mixed tapes");
    ids.push_back(p.id);
    sizes.push_back(p.value().size());
    total += p.value().rows();
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  }
  return parts.front().tape->record(
      Tensor({total, n}, std::move(data)), ids,
      [ids, sizes](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        std::size_t off = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (Tensor* gp = t.grad_buffer(ids[p])) {
            for (std::size_t i = 0; i < sizes[p]; ++i) (*gp)[i] += g[off + i];
          }
          off += sizes[p];
        }
      },
      "concat_rows");
}

/// Row lookup: out[i] = table[ids[i]]. Used for token embeddings.
inline Var gather_rows(Var table, const std::vector<std::size_t>& ids) {
  const Tensor& tv = table.value();
  detail::require_rank(tv, 2, "gather_rows");
  if (ids.empty()) throw ShapeError("gather_rows: empty id list");
  const std::size_t n = tv.cols();
  Tensor y({ids.size(), n});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) {
      throw ValidationError("gather_rows: id " + std::to_string(ids[i]) + " >= " +
                            std::to_string(tv.rows()));
    }
    std::copy_n(tv.data().begin() + ids[i] * n, n, y.data().begin() + i * n);
  }
  return table.tape->record(
      std::move(y), {table.id},
      [table = table.id, ids, n](Tape& t, std::size_t self) {
        if (Tensor* gt = t.grad_buffer(table)) {
          const Tensor& g = t.grad(self);
          for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < n; ++j) (*gt)[ids[i] * n + j] += g[i * n + j];
        }
      },
      "gather_rows");
}

/// Row-wise layer normalization with learned gain and shift (both width n).
inline Var layer_norm(Var x, Var gain, Var shift, double eps = 1e-5) {
  Tape& tape = detail::same_tape(x, gain, "layer_norm");
  detail::same_tape(x, shift, "layer_norm");
  const Tensor& xv = x.value();
  detail::require_rank(xv, 2, "layer_norm");
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gain.value().size() != n || shift.value().size() != n) {
    throw ShapeError("layer_norm: affine parameters must have width " + std::to_string(n));
  }
  Tensor xhat({m, n});
  std::vector<double> inv_std(m);
  Tensor y({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xv(i, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xv(i, j) - mu) * (xv(i, j) - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat(i, j) = (xv(i, j) - mu) * inv_std[i];
      y(i, j) = gain.value()[j] * xhat(i, j) + shift.value()[j];
    }
  }
  return tape.record(
      std::move(y), {x.id, gain.id, shift.id},
      [x = x.id, gain = gain.id, shift = shift.id, xhat = std::move(xhat),
       inv_std = std::move(inv_std), m, n](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& gv = t.value(gain);
        if (Tensor* gg = t.grad_buffer(gain))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) (*gg)[j] += g(i, j) * xhat(i, j);
        if (Tensor* gs = t.grad_buffer(shift))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) (*gs)[j] += g(i, j);
        if (Tensor* gx = t.grad_buffer(x)) {
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g(i, j) * gv[j];
              mean_d += d;
              mean_dx += d * xhat(i, j);
            }
            mean_d /= static_cast<double>(n);
            mean_dx /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g(i, j) * gv[j];
              (*gx)(i, j) += inv_std[i] * (d - mean_d - xhat(i, j) * mean_dx);
            }
          }
        }
      },
      "layer_norm");
}

/// Group normalization over a channels-last tensor: the trailing extent is
/// the channel axis, all leading extents are positions. Each group of
/// channels/groups consecutive channels is normalized to zero mean and unit
/// variance over every position. No affine; see channel_affine.
inline Var group_norm(Var x, std::size_t groups, double eps = 1e-5) {
  const Tensor& xv = x.value();
  const std::size_t c = xv.shape().back();
  if (groups == 0 || c % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  if (!(eps > 0.0)) throw ValidationError("group_norm: eps must be positive");
  const std::size_t positions = xv.size() / c;
  const std::size_t per = c / groups;
  const double count = static_cast<double>(positions * per);
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    double mu = 0.0;
    for (std::size_t p = 0; p < positions; ++p)
      for (std::size_t k = 0; k < per; ++k) mu += xv[p * c + g * per + k];
    mu /= count;
    double var = 0.0;
    for (std::size_t p = 0; p < positions; ++p)
      for (std::size_t k = 0; k < per; ++k) {
        const double d = xv[p * c + g * per + k] - mu;
        var += d * d;
      }
    var /= count;
    inv_std[g] = 1.0 / std::sqrt(var + eps);
    for (std::size_t p = 0; p < positions; ++p)
      for (std::size_t k = 0; k < per; ++k) {
        const std::size_t idx = p * c + g * per + k;
        xhat[idx] = (xv[idx] - mu) * inv_std[g];
      }
  }
  Tensor y = xhat;
  return x.tape->record(
      std::move(y), {x.id},
      [x = x.id, xhat = std::move(xhat), inv_std = std::move(inv_std), groups, positions, per, c,
       count](Tape& t, std::size_t self) {
        Tensor* gx = t.grad_buffer(x);
        if (gx == nullptr) return;
        const Tensor& gy = t.grad(self);
        for (std::size_t g = 0; g < groups; ++g) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t p = 0; p < positions; ++p)
            for (std::size_t k = 0; k < per; ++k) {
              const std::size_t idx = p * c + g * per + k;
              mean_d += gy[idx];
              mean_dx += gy[idx] * xhat[idx];
            }
          mean_d /= count;
          mean_dx /= count;
          for (std::size_t p = 0; p < positions; ++p)
            for (std::size_t k = 0; k < per; ++k) {
              const std::size_t idx = p * c + g * per + k;
              (*gx)[idx] += inv_std[g] * (gy[idx] - mean_d - xhat[idx] * mean_dx);
            }
        }
      },
      "group_norm");
}

/// y[..., ch] = x[..., ch]·gain[ch] + shift[ch] on a channels-last tensor.
inline Var channel_affine(Var x, Var gain, Var shift) {
  Tape& tape = detail::same_tape(x, gain, "channel_affine");
  detail::same_tape(x, shift, "channel_affine");
  const Tensor& xv = x.value();
  const std::size_t c = xv.shape().back();
  if (gain.value().size() != c || shift.value().size() != c) {
    throw ShapeError("channel_affine: parameters must have " + std::to_string(c) + " entries");
  }
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i)
    y[i] = xv[i] * gain.value()[i % c] + shift.value()[i % c];
  return tape.record(
      std::move(y), {x.id, gain.id, shift.id},
      [x = x.id, gain = gain.id, shift = shift.id, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.value(x);
        const Tensor& gv = t.value(gain);
        if (Tensor* gx = t.grad_buffer(x))
          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * gv[i % c];
        if (Tensor* gg = t.grad_buffer(gain))
          for (std::size_t i = 0; i < g.size(); ++i) (*gg)[i % c] += g[i] * xv[i];
        if (Tensor* gs = t.grad_buffer(shift))
          for (std::size_t i = 0; i < g.size(); ++i) (*gs)[i % c] += g[i];
      },
      "channel_affine");
}

/// Softmax over the trailing axis with masked entries forced to exactly 0.
/// The mask has one row per softmax row. Rows are shifted by their unmasked
/// maximum before exponentiation. A row with no unmasked entry is rejected.
inline Var masked_softmax(Var logits, const Mask& mask) {
  const Tensor& lv = logits.value();
  const std::size_t n = lv.shape().back();
  const std::size_t rows = lv.size() / n;
  if (mask.rows() != rows || mask.cols() != n) {
    throw ShapeError("masked_softmax: mask " + std::to_string(mask.rows()) + "x" +
                     std::to_string(mask.cols()) + " for logits " + shape_string(lv.shape()));
  }
  Tensor p(lv.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (mask(i, j)) mx = std::max(mx, lv[i * n + j]);
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw ValidationError("masked_softmax: row " + std::to_string(i) + " is fully masked");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = mask(i, j) ? std::exp(lv[i * n + j] - mx) : 0.0;
      p[i * n + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < n; ++j) p[i * n + j] /= z;
  }
  return logits.tape->record(
      p, {logits.id},
      [logits = logits.id, p, rows, n](Tape& t, std::size_t self) {
        Tensor* gl = t.grad_buffer(logits);
        if (gl == nullptr) return;
        const Tensor& g = t.grad(self);
        for (std::size_t i = 0; i < rows; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += p[i * n + j] * g[i * n + j];
          for (std::size_t j = 0; j < n; ++j)
            (*gl)[i * n + j] += p[i * n + j] * (g[i * n + j] - dot);
        }
      },
      "masked_softmax");
}

inline Var softmax(Var logits) {
  const std::size_t n = logits.value().shape().back();
  return masked_softmax(logits, Mask(logits.value().size() / n, n, true));
}

/// Mean over non-ignored positions of -log softmax(logits[i])[targets[i]].
/// Returns 0 when every position is ignored.
inline Var cross_entropy(Var logits, const std::vector<std::size_t>& targets,
                         std::size_t ignore_id) {
  const Tensor& lv = logits.value();
  detail::require_rank(lv, 2, "cross_entropy");
  const std::size_t t_len = lv.rows(), vocab = lv.cols();
  if (targets.size() != t_len) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(t_len) + " rows");
  }
  Tensor probs({t_len, vocab});
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < t_len; ++i) {
    const std::size_t tgt = targets[i];
    if (tgt == ignore_id) continue;
    if (tgt >= vocab) {
      throw ValidationError("cross_entropy: target " + std::to_string(tgt) +
                            " outside vocabulary of " + std::to_string(vocab));
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < vocab; ++j) mx = std::max(mx, lv(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      probs(i, j) = std::exp(lv(i, j) - mx);
      z += probs(i, j);
    }
    for (std::size_t j = 0; j < vocab; ++j) probs(i, j) /= z;
    total += (mx + std::log(z)) - lv(i, tgt);
    ++counted;
  }
  const double loss = counted ? total / static_cast<double>(counted) : 0.0;
  return logits.tape->record(
      Tensor::scalar(loss), {logits.id},
      [logits = logits.id, probs = std::move(probs), targets, ignore_id, counted, vocab](
          Tape& t, std::size_t self) {
        Tensor* gl = t.grad_buffer(logits);
        if (gl == nullptr || counted == 0) return;
        const double g = t.grad(self)[0] / static_cast<double>(counted);
        for (std::size_t i = 0; i < targets.size(); ++i) {
          if (targets[i] == ignore_id) continue;
          for (std::size_t j = 0; j < vocab; ++j)
            (*gl)(i, j) += g * (probs(i, j) - (j == targets[i] ? 1.0 : 0.0));
        }
      },
      "cross_entropy");
}

/// Output extent of a valid (unpadded) convolution along one axis.
inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride) {
  return (in - k) / stride + 1;
}

/// Valid 3-D cross-correlation, channels last.
/// x[w×h×d×c_in], kernel[kw×kh×kd×c_in×c_out] -> [w'×h'×d'×c_out].
inline Var conv3d(Var x, Var kernel, std::size_t stride) {
  Tape& tape = detail::same_tape(x, kernel, "conv3d");
  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  detail::require_rank(xv, 4, "conv3d");
  detail::require_rank(kv, 5, "conv3d");
  if (stride == 0) throw ValidationError("conv3d: stride must be >= 1");
  const std::size_t W = xv.dim(0), H = xv.dim(1), D = xv.dim(2), C = xv.dim(3);
  const std::size_t KW = kv.dim(0), KH = kv.dim(1), KD = kv.dim(2), CO = kv.dim(4);
  if (kv.dim(3) != C) throw ShapeError("conv3d: kernel input channels differ from input");
  if (KW > W || KH > H || KD > D) {
    throw ShapeError("conv3d: kernel " + shape_string(kv.shape()) + " larger than input " +
                     shape_string(xv.shape()));
  }
  const std::size_t OW = conv_out_extent(W, KW, stride);
  const std::size_t OH = conv_out_extent(H, KH, stride);
  const std::size_t OD = conv_out_extent(D, KD, stride);
  const std::size_t P = OW * OH * OD;
  const std::size_t K = KW * KH * KD * C;
  // im2col: one row per output position, columns ordered like the kernel.
  Tensor patches({P, K});
  for (std::size_t ow = 0; ow < OW; ++ow)
    for (std::size_t oh = 0; oh < OH; ++oh)
      for (std::size_t od = 0; od < OD; ++od) {
        const std::size_t p = (ow * OH + oh) * OD + od;
        std::size_t col = 0;
        for (std::size_t i = 0; i < KW; ++i)
          for (std::size_t j = 0; j < KH; ++j)
            for (std::size_t k = 0; k < KD; ++k) {
              const std::size_t base =
                  (((ow * stride + i) * H + (oh * stride + j)) * D + (od * stride + k)) * C;
              for (std::size_t c = 0; c < C; ++c) patches(p, col++) = xv[base + c];
            }
      }
  Tensor y({OW, OH, OD, CO});
  detail::as_mat(y, P, CO).noalias() = detail::as_mat(patches, P, K) * detail::as_mat(kv, K, CO);
  return tape.record(
      std::move(y), {x.id, kernel.id},
      [x = x.id, kernel = kernel.id, patches = std::move(patches), W, H, D, C, KW, KH, KD, CO,
       OW, OH, OD, P, K, stride](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (Tensor* gk = t.grad_buffer(kernel)) {
          detail::as_mat(*gk, K, CO).noalias() +=
              detail::as_mat(patches, P, K).transpose() * detail::as_mat(g, P, CO);
        }
        if (Tensor* gx = t.grad_buffer(x)) {
          Tensor dpatch({P, K});
          detail::as_mat(dpatch, P, K).noalias() =
              detail::as_mat(g, P, CO) * detail::as_mat(t.value(kernel), K, CO).transpose();
          for (std::size_t ow = 0; ow < OW; ++ow)
            for (std::size_t oh = 0; oh < OH; ++oh)
              for (std::size_t od = 0; od < OD; ++od) {
                const std::size_t p = (ow * OH + oh) * OD + od;
                std::size_t col = 0;
                for (std::size_t i = 0; i < KW; ++i)
                  for (std::size_t j = 0; j < KH; ++j)
                    for (std::size_t k = 0; k < KD; ++k) {
                      const std::size_t base =
                          (((ow * stride + i) * H + (oh * stride + j)) * D + (od * stride + k)) *
                          C;
                      for (std::size_t c = 0; c < C; ++c) (*gx)[base + c] += dpatch(p, col++);
                    }
              }
        }
        (void)W;
      },
      "conv3d");
}

}  // namespace predft::numkit
