#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include "predft/model/training.hpp"

namespace predft::model {

/// Tokens the main decoder may emit: everything but pad, bos and the
/// side-sequence separator.
inline bool emittable(TokenId t) { return t != Vocab::kPad && t != Vocab::kBos && t != Vocab::kSep; }

/// Highest-scoring emittable token in a logits row; ties go to the lower id.
inline TokenId best_token(const Tensor& logits, std::size_t row) {
  TokenId best = Vocab::kEos;
  double score = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < logits.cols(); ++j) {
    if (emittable(j) && logits(row, j) > score) {
      score = logits(row, j);
      best = j;
    }
  }
  return best;
}

/// Encoder outputs for one example, computed once per decode.
struct Encoded {
  Var enc;
  std::optional<Var> pred;
};

inline Encoded encode_example(const PredFT& model, Bound& b, const Example& e) {
  Encoded out{model.encode_main(b, e.fmri), std::nullopt};
  if (model.config().side_network) out.pred = model.encode_side(b, e.rois);
  return out;
}

/// Main-decoder logits for decoder input `inputs`, fragments from the
/// per-frame token budget.
inline Tensor decode_logits(const PredFT& model, Bound& b, const Encoded& x, const std::vector<TokenId>& inputs) {
  const ModelConfig& cfg = model.config();
  if (!x.pred) return model.decode_main(b, x.enc, nullptr, inputs, nullptr).value();
  const PcMask mask = build_pc_mask(budget_fragments(inputs.size(), cfg.tokens_per_frame), cfg.retained_frames());
  return model.decode_main(b, x.enc, &*x.pred, inputs, &mask).value();
}

struct Hypothesis {
  std::vector<TokenId> tokens;  ///< without bos; ends with eos when finished
  double log_prob = 0.0;
  bool finished = false;
};

inline std::vector<double> log_softmax_row(const Tensor& logits, std::size_t row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < logits.cols(); ++j) mx = std::max(mx, logits(row, j));
  double z = 0.0;
  for (std::size_t j = 0; j < logits.cols(); ++j) z += std::exp(logits(row, j) - mx);
  std::vector<double> out(logits.cols());
  for (std::size_t j = 0; j < logits.cols(); ++j) out[j] = logits(row, j) - mx - std::log(z);
  return out;
}

/// Autoregressive decoding from bos. Width 1 is greedy; wider beams keep the
/// best cumulative log-probabilities. The result excludes bos and eos.
inline std::vector<TokenId> generate(const PredFT& model, const Example& e, std::size_t max_length,
                                     std::size_t beam_width = 1) {
  if (max_length == 0) return {};
  if (beam_width == 0) throw ValidationError("generate: beam width must be positive");
  Tape tape(false);
  Bound b(tape, model.params());
  const Encoded x = encode_example(model, b, e);
  const std::size_t limit = std::min(max_length, model.config().max_positions - 1);

  if (beam_width == 1) {
    std::vector<TokenId> inputs{Vocab::kBos};
    while (inputs.size() - 1 < limit) {
      const Tensor logits = decode_logits(model, b, x, inputs);
      const TokenId t = best_token(logits, inputs.size() - 1);
      if (t == Vocab::kEos) break;
      inputs.push_back(t);
    }
    return {inputs.begin() + 1, inputs.end()};
  }

  std::vector<Hypothesis> beam{Hypothesis{}};
  for (std::size_t len = 0; len < limit; ++len) {
    std::vector<Hypothesis> next;
    for (const auto& h : beam) {
      if (h.finished) {
        next.push_back(h);
        continue;
      }
      const Tensor logits = decode_logits(model, b, x, with_bos(h.tokens));
      const auto lp = log_softmax_row(logits, h.tokens.size());
      for (TokenId t = 0; t < lp.size(); ++t) {
        if (!emittable(t)) continue;
        Hypothesis c = h;
        c.tokens.push_back(t);
        c.log_prob += lp[t];
        c.finished = t == Vocab::kEos;
        next.push_back(std::move(c));
      }
    }
    std::stable_sort(next.begin(), next.end(), [](const Hypothesis& a, const Hypothesis& c) {
      if (a.log_prob != c.log_prob) return a.log_prob > c.log_prob;
      return a.tokens < c.tokens;
    });
    if (next.size() > beam_width) next.resize(beam_width);
    beam = std::move(next);
    if (std::all_of(beam.begin(), beam.end(), [](const Hypothesis& h) { return h.finished; })) break;
  }
  std::vector<TokenId> out = beam.front().tokens;
  if (!out.empty() && out.back() == Vocab::kEos) out.pop_back();
  return out;
}

/// Teacher-forced best token at every position of `inputs` (bos first).
inline std::vector<TokenId> teacher_forced_argmax(const PredFT& model, const Example& e,
                                                  const std::vector<TokenId>& inputs) {
  Tape tape(false);
  Bound b(tape, model.params());
  const Encoded x = encode_example(model, b, e);
  const Tensor logits = decode_logits(model, b, x, inputs);
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < inputs.size(); ++i) out.push_back(best_token(logits, i));
  return out;
}

}  // namespace predft::model
