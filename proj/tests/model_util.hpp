#pragma once

#include <functional>
#include <random>
#include <vector>

#include "predft/model.hpp"
#include "test_util.hpp"

// Tiny model configurations and forward helpers shared by the model and acceptance suites.
namespace predft::testing {

using namespace predft::model;

inline constexpr TokenId kFirstWord = 5;

inline ModelConfig tiny_config(bool side = true) {
  ModelConfig c;
  c.d_model = 16;
  c.heads = 2;
  c.ffn_dim = 16;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.side_encoder_layers = 1;
  c.side_decoder_layers = 1;
  c.frames = 4;
  c.fir_window = 2;
  c.side_network = side;
  c.input_shape = {32};
  c.roi_width = side ? 6 : 0;
  c.vocab_size = 14;
  c.tokens_per_frame = 2.0;
  c.dropout = 0.0;
  c.input_noise = 0.0;
  c.max_generate = 10;
  return c;
}

/// Random example matching `c`: k* frames of text with two words each.
inline Example random_example(const ModelConfig& c, std::mt19937_64& rng) {
  std::uniform_int_distribution<TokenId> word(kFirstWord, c.vocab_size - 1);
  Example e;
  e.fmri = random_normal({c.input_shape[0], c.frames}, rng);
  if (c.side_network) e.rois = random_normal({c.frames, c.roi_width}, rng);
  for (std::size_t f = 0; f < c.retained_frames(); ++f) {
    for (int k = 0; k < 2; ++k) {
      e.words.push_back(word(rng));
      e.word_fragments.push_back(f);
    }
    e.frame_sizes.push_back(2);
  }
  for (int k = 0; k < 5; ++k) e.future.push_back(k == 2 ? Vocab::kSep : word(rng));
  return e;
}

inline Tensor main_logits(const PredFT& m, const Example& e, const Tensor* pred_override = nullptr,
                   std::vector<DecoderTrace>* traces = nullptr) {
  Tape tape(false);
  Bound b(tape, m.params());
  const Var enc = m.encode_main(b, e.fmri);
  const auto inputs = with_bos(e.words);
  if (!m.config().side_network) return m.decode_main(b, enc, nullptr, inputs, nullptr, traces).value();
  const Var pred = pred_override ? tape.constant(*pred_override) : m.encode_side(b, e.rois);
  const PcMask mask = build_pc_mask(input_fragments(e), m.config().retained_frames());
  return m.decode_main(b, enc, &pred, inputs, &mask, traces).value();
}

inline Tensor side_rep(const PredFT& m, const Example& e) {
  Tape tape(false);
  Bound b(tape, m.params());
  return m.encode_side(b, e.rois).value();
}

inline double loss_value(const PredFT& m, const Example& e) {
  Tape tape(false);
  Bound b(tape, m.params());
  return example_loss(m, b, e).total.value().item();
}

inline bool rows_equal(const Tensor& a, const Tensor& b, std::size_t row) {
  for (std::size_t j = 0; j < a.cols(); ++j)
    if (a(row, j) != b(row, j)) return false;
  return true;
}

// All non-decreasing vectors of length n with entries in [0, hi].
inline void monotone_vectors(std::size_t n, std::size_t hi, std::vector<std::size_t>& cur,
                      const std::function<void(const std::vector<std::size_t>&)>& visit) {
  if (cur.size() == n) {
    visit(cur);
    return;
  }
  for (std::size_t v = cur.empty() ? 0 : cur.back(); v <= hi; ++v) {
    cur.push_back(v);
    monotone_vectors(n, hi, cur, visit);
    cur.pop_back();
  }
}

}  // namespace predft::testing
