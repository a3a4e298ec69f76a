#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "predft/numkit/tape.hpp"
#include "predft/numkit/tensor.hpp"

namespace predft::numkit {

/// Scalar-valued function of one tensor, expressed on a tape.
using ScalarFn = std::function<Var(Tape&, Var)>;

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;   ///< flat index of the worst coordinate
  Shape worst_coords;            ///< same coordinate as a multi-index
  double analytic = 0.0;         ///< analytic derivative at the worst coordinate
  double numeric = 0.0;          ///< finite-difference estimate there
  std::size_t checked = 0;
};

inline Shape unravel(std::size_t flat, const Shape& shape) {
  Shape idx(shape.size());
  for (std::size_t a = shape.size(); a-- > 0;) {
    idx[a] = flat % shape[a];
    flat /= shape[a];
  }
  return idx;
}

/// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
/// derivative is ~0 from dominating on rounding noise.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares reverse-mode gradients of `f` at `x` against central finite
/// differences. `coords` restricts the check to a subset of flat indices
/// (all coordinates when empty). Failures are reported, never thrown.
inline GradCheckReport grad_check(const ScalarFn& f, const Tensor& x, double rel_tol,
                                  double step = 1e-4,
                                  const std::vector<std::size_t>& coords = {}) {
  Tensor analytic;
  {
    Tape tape;
    Var xv = tape.leaf(x, true);
    Var y = f(tape, xv);
    analytic = tape.backward(y).at(xv.id);
  }
  auto eval = [&](const Tensor& at) {
    Tape tape(false);
    return f(tape, tape.leaf(at, false)).value().item();
  };
  std::vector<std::size_t> idx = coords;
  if (idx.empty()) {
    idx.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) idx[i] = i;
  }
  GradCheckReport rep;
  Tensor probe = x;
  for (std::size_t i : idx) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = eval(probe);
    probe[i] = orig - step;
    const double down = eval(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double err = relative_error(analytic[i], numeric);
    if (rep.checked == 0 || err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_index = i;
      rep.analytic = analytic[i];
      rep.numeric = numeric;
    }
    ++rep.checked;
  }
  rep.worst_coords = unravel(rep.worst_index, x.shape());
  rep.passed = rep.max_rel_error < rel_tol;
  return rep;
}

}  // namespace predft::numkit
