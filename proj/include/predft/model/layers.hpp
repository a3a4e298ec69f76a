#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "predft/model/params.hpp"
#include "predft/numkit/ops.hpp"

namespace predft::model {

using numkit::Mask;

/// Collects attention probability matrices (one per head) when non-null.
using AttentionTrace = std::vector<Tensor>;

inline void init_linear(ParamStore& ps, const std::string& p, std::size_t in, std::size_t out,
                        std::mt19937_64& rng) {
  ps.add_uniform(p + "/w", {in, out}, in, rng);
  ps.add_constant(p + "/b", {out}, 0.0);
}

inline Var linear(Bound& b, const std::string& p, Var x) {
  return numkit::add_row(numkit::matmul(x, b[p + "/w"]), b[p + "/b"]);
}

inline void init_norm(ParamStore& ps, const std::string& p, std::size_t n) {
  ps.add_constant(p + "/gain", {n}, 1.0);
  ps.add_constant(p + "/shift", {n}, 0.0);
}

inline Var norm(Bound& b, const std::string& p, Var x) {
  return numkit::layer_norm(x, b[p + "/gain"], b[p + "/shift"]);
}

inline void init_attention(ParamStore& ps, const std::string& p, std::size_t d, std::mt19937_64& rng) {
  for (const char* n : {"/q", "/k", "/v", "/o"}) init_linear(ps, p + n, d, d, rng);
}

/// Multi-head scaled dot-product attention of `query` rows over `memory`
/// rows; mask(i, j) allows query i to see memory j.
inline Var attention(Bound& b, const std::string& p, Var query, Var memory, const Mask& mask,
                     std::size_t heads, AttentionTrace* trace = nullptr) {
  const std::size_t d = query.value().cols();
  const std::size_t dh = d / heads;
  const Var q = linear(b, p + "/q", query);
  const Var k = linear(b, p + "/k", memory);
  const Var v = linear(b, p + "/v", memory);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = numkit::slice_cols(q, h * dh, dh);
    const Var kh = numkit::slice_cols(k, h * dh, dh);
    const Var vh = numkit::slice_cols(v, h * dh, dh);
    const Var scores = numkit::scale(numkit::matmul(qh, numkit::transpose(kh)), scale);
    const Var probs = numkit::masked_softmax(scores, mask);
    if (trace) trace->push_back(probs.value());
    outs.push_back(numkit::matmul(probs, vh));
  }
  const Var joined = heads == 1 ? outs.front() : numkit::concat_cols(outs);
  return linear(b, p + "/o", joined);
}

inline void init_ffn(ParamStore& ps, const std::string& p, std::size_t d, std::size_t hidden,
                     std::mt19937_64& rng) {
  init_linear(ps, p + "/in", d, hidden, rng);
  init_linear(ps, p + "/out", hidden, d, rng);
}

inline Var ffn(Bound& b, const std::string& p, Var x) {
  return linear(b, p + "/out", numkit::relu(linear(b, p + "/in", x)));
}

/// Post-norm residual: norm(x + f(x)).
template <typename Fn>
Var residual(Bound& b, const std::string& norm_name, Var x, Fn&& f) {
  return norm(b, norm_name, numkit::add(x, b.dropout(f(x))));
}

inline void init_encoder_layer(ParamStore& ps, const std::string& p, std::size_t d, std::size_t hidden,
                               std::mt19937_64& rng) {
  init_attention(ps, p + "/self", d, rng);
  init_norm(ps, p + "/norm1", d);
  init_ffn(ps, p + "/ffn", d, hidden, rng);
  init_norm(ps, p + "/norm2", d);
}

inline Var encoder_layer(Bound& b, const std::string& p, Var x, std::size_t heads) {
  const Mask full(x.value().rows(), x.value().rows(), true);
  x = residual(b, p + "/norm1", x, [&](Var h) { return attention(b, p + "/self", h, h, full, heads); });
  return residual(b, p + "/norm2", x, [&](Var h) { return ffn(b, p + "/ffn", h); });
}

inline void init_decoder_layer(ParamStore& ps, const std::string& p, std::size_t d, std::size_t hidden,
                               bool predictive, std::mt19937_64& rng) {
  init_attention(ps, p + "/self", d, rng);
  init_norm(ps, p + "/norm1", d);
  init_attention(ps, p + "/cross", d, rng);
  init_norm(ps, p + "/norm2", d);
  if (predictive) {
    init_attention(ps, p + "/pc", d, rng);
    init_norm(ps, p + "/norm_pc", d);
  }
  init_ffn(ps, p + "/ffn", d, hidden, rng);
  init_norm(ps, p + "/norm3", d);
}

/// Attention traces per sublayer kind, for inspection.
struct DecoderTrace {
  AttentionTrace self, cross, pc;
};

/// Causal self-attention, cross-attention over `memory`, optional
/// predictive-coding attention over `pred` under `pc_mask`, feed-forward.
inline Var decoder_layer(Bound& b, const std::string& p, Var x, Var memory, const Var* pred,
                         const Mask* pc_mask, std::size_t heads, DecoderTrace* trace = nullptr) {
  const std::size_t n = x.value().rows();
  const Mask causal = Mask::causal(n);
  const Mask full(n, memory.value().rows(), true);
  x = residual(b, p + "/norm1", x, [&](Var h) {
    return attention(b, p + "/self", h, h, causal, heads, trace ? &trace->self : nullptr);
  });
  x = residual(b, p + "/norm2", x, [&](Var h) {
    return attention(b, p + "/cross", h, memory, full, heads, trace ? &trace->cross : nullptr);
  });
  if (pred) {
    x = residual(b, p + "/norm_pc", x, [&](Var h) {
      return attention(b, p + "/pc", h, *pred, *pc_mask, heads, trace ? &trace->pc : nullptr);
    });
  }
  return residual(b, p + "/norm3", x, [&](Var h) { return ffn(b, p + "/ffn", h); });
}

}  // namespace predft::model
