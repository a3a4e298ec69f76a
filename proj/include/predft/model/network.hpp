#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "predft/data/vocab.hpp"
#include "predft/model/config.hpp"
#include "predft/model/layers.hpp"

namespace predft::model {

using data::TokenId;
using data::Vocab;

/// Token-to-fragment assignment and the predictive-coding attention mask
/// derived from it.
struct PcMask {
  Mask mask;
  std::vector<std::size_t> fragments;
};

/// Row i allows columns j >= min(fragment(i), k*-1).
inline PcMask build_pc_mask(const std::vector<std::size_t>& fragments, std::size_t k_star) {
  if (k_star == 0) throw ValidationError("pc mask: k* must be positive");
  for (std::size_t i = 1; i < fragments.size(); ++i) {
    if (fragments[i] < fragments[i - 1]) throw ValidationError("pc mask: fragment ids must be non-decreasing");
  }
  PcMask out{Mask(fragments.size(), k_star, false), fragments};
  for (std::size_t i = 0; i < fragments.size(); ++i)
    for (std::size_t j = std::min(fragments[i], k_star - 1); j < k_star; ++j) out.mask.set(i, j, true);
  return out;
}

/// Fragment of each generated position under a fixed per-frame token budget.
inline std::vector<std::size_t> budget_fragments(std::size_t length, double tokens_per_frame) {
  std::vector<std::size_t> out(length);
  for (std::size_t i = 0; i < length; ++i)
    out[i] = static_cast<std::size_t>(static_cast<double>(i) / tokens_per_frame);
  return out;
}

/// Side-decoder sequence: per-frame future tokens joined by separators.
inline std::vector<TokenId> flatten_future(const std::vector<std::vector<TokenId>>& per_frame) {
  std::vector<TokenId> out;
  for (std::size_t t = 0; t < per_frame.size(); ++t) {
    if (t > 0) out.push_back(Vocab::kSep);
    out.insert(out.end(), per_frame[t].begin(), per_frame[t].end());
  }
  return out;
}

inline std::size_t gcd_groups(std::size_t channels) { return std::gcd(channels, std::size_t{4}); }

/// Main and side networks over one shared parameter store.
class PredFT {
 public:
  explicit PredFT(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.require_geometry();
    std::mt19937_64 rng(cfg_.seed);
    init(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // ---- fMRI encoders ----------------------------------------------------------

  /// frames[d_s × (k+1)] -> [(k+1) × d_m] through a halving linear stack.
  Var encode_2d(Bound& b, const Tensor& frames) const {
    if (frames.rank() != 2 || frames.rows() != cfg_.input_shape[0]) {
      throw ShapeError("2D encoder: expected " + std::to_string(cfg_.input_shape[0]) + " voxels, got " +
                       numkit::shape_string(frames.shape()));
    }
    Var x = b.tape().constant(numkit::transpose(frames));
    for (std::size_t i = 0; i < widths_2d_.size() - 1; ++i) x = linear(b, "enc2d/" + std::to_string(i), x);
    return x;
  }

  /// frames[w × h × d × (k+1)] -> [(k+1) × d_m].
  Var encode_3d(Bound& b, const Tensor& frames) const {
    if (frames.rank() != 4 || frames.dim(0) != cfg_.input_shape[0] || frames.dim(1) != cfg_.input_shape[1] ||
        frames.dim(2) != cfg_.input_shape[2]) {
      throw ShapeError("3D encoder: input " + numkit::shape_string(frames.shape()) + " does not match " +
                       numkit::shape_string(cfg_.input_shape));
    }
    const std::size_t W = frames.dim(0), H = frames.dim(1), D = frames.dim(2), T = frames.dim(3);
    std::vector<Var> rows;
    for (std::size_t t = 0; t < T; ++t) {
      Tensor f({W, H, D, 1});
      for (std::size_t v = 0; v < W * H * D; ++v) f[v] = frames[v * T + t];
      Var x = b.tape().constant(std::move(f));
      std::size_t channels = 1;
      for (std::size_t l = 0; l < cfg_.cnn_layers; ++l) {
        const std::string p = "cnn/" + std::to_string(l);
        const std::size_t out_c = cnn_channels_[l];
        Var h = numkit::group_norm(x, gcd_groups(channels));
        h = numkit::channel_affine(h, b[p + "/gain"], b[p + "/shift"]);
        h = numkit::relu(h);
        h = numkit::conv3d(h, b[p + "/kernel"], l % 2 == 0 ? 2 : 1);
        const Shape s = h.value().shape();
        h = numkit::reshape(numkit::add_row(numkit::reshape(h, {s[0] * s[1] * s[2], s[3]}), b[p + "/bias"]), s);
        x = l % 2 == 0 ? h : numkit::add(x, h);
        channels = out_c;
      }
      rows.push_back(linear(b, "cnn/proj", numkit::reshape(x, {1, x.value().size()})));
    }
    return numkit::concat_rows(rows);
  }

  Var encode_fmri(Bound& b, const Tensor& frames) const {
    return cfg_.volumetric() ? encode_3d(b, frames) : encode_2d(b, frames);
  }

  /// Row t fuses x_t .. x_{t+w-1}.
  Var fir(Bound& b, Var x) const {
    const std::size_t n = x.value().rows(), w = cfg_.fir_window;
    if (w > n) throw ShapeError("FIR: window " + std::to_string(w) + " exceeds " + std::to_string(n) + " frames");
    const std::size_t k_star = n - w + 1;
    std::vector<Var> parts;
    for (std::size_t j = 0; j < w; ++j) parts.push_back(numkit::slice_rows(x, j, k_star));
    return linear(b, "fir", w == 1 ? parts.front() : numkit::concat_cols(parts));
  }

  Var add_positions(Bound& b, const std::string& table, Var x) const {
    const std::size_t n = x.value().rows();
    if (n > b[table].value().rows()) throw ValidationError("sequence of " + std::to_string(n) + " exceeds positions");
    return numkit::add(x, numkit::slice_rows(b[table], 0, n));
  }

  /// EncoderState [k* × d_m].
  Var encode_main(Bound& b, const Tensor& frames) const {
    Var x = b.dropout(add_positions(b, "enc/pos", norm(b, "enc/in_norm", fir(b, encode_fmri(b, frames)))));
    for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) x = encoder_layer(b, "enc/" + std::to_string(l), x, cfg_.heads);
    return x;
  }

  /// PredictiveRep [k* × d_m] from rois[(k+1) × d_r].
  Var encode_side(Bound& b, const Tensor& rois) const {
    require_side();
    if (rois.rank() != 2 || rois.cols() != cfg_.roi_width) {
      throw ShapeError("side network: ROI input " + numkit::shape_string(rois.shape()) + ", expected width " +
                       std::to_string(cfg_.roi_width));
    }
    Var x = b.tape().constant(rois);
    x = linear(b, "side/fusion/out", numkit::relu(linear(b, "side/fusion/in", x)));
    x = b.dropout(add_positions(b, "side/enc/pos", norm(b, "side/enc/in_norm", fir(b, x))));
    for (std::size_t l = 0; l < cfg_.side_encoder_layers; ++l)
      x = encoder_layer(b, "side/enc/" + std::to_string(l), x, cfg_.heads);
    return x;
  }

  /// Word embeddings with learned positions; `detach_embedding` blocks the
  /// gradient into the shared table.
  Var embed(Bound& b, const std::vector<TokenId>& tokens, const std::string& pos, bool detach_embedding) const {
    for (TokenId t : tokens)
      if (t >= cfg_.vocab_size) throw ValidationError("token id " + std::to_string(t) + " outside vocabulary");
    Var table = b["embed"];
    if (detach_embedding) table = numkit::detach(table);
    return b.dropout(add_positions(b, pos, numkit::gather_rows(table, tokens)));
  }

  /// Logits [k_t × V] for decoder inputs `tokens`.
  Var decode_main(Bound& b, Var enc, const Var* pred, const std::vector<TokenId>& tokens, const PcMask* mask,
                  std::vector<DecoderTrace>* traces = nullptr) const {
    if (cfg_.side_network != (pred != nullptr)) {
      throw ValidationError("main decoder: predictive representation must be given iff the side network is on");
    }
    if (pred && (!mask || mask->mask.rows() != tokens.size() || mask->mask.cols() != pred->value().rows())) {
      throw ShapeError("main decoder: predictive-coding mask does not match tokens and representation");
    }
    Var x = embed(b, tokens, "dec/pos", false);
    if (traces) traces->assign(cfg_.decoder_layers, {});
    for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
      x = decoder_layer(b, "dec/" + std::to_string(l), x, enc, pred, pred ? &mask->mask : nullptr, cfg_.heads,
                        traces ? &(*traces)[l] : nullptr);
    }
    return linear(b, "dec/out", x);
  }

  /// Side-decoder logits over the flattened future-token sequence.
  Var decode_side(Bound& b, Var pred, const std::vector<TokenId>& tokens) const {
    require_side();
    Var x = embed(b, tokens, "side/dec/pos", true);
    for (std::size_t l = 0; l < cfg_.side_decoder_layers; ++l)
      x = decoder_layer(b, "side/dec/" + std::to_string(l), x, pred, nullptr, nullptr, cfg_.heads);
    return linear(b, "side/dec/out", x);
  }

 private:
  void require_side() const {
    if (!cfg_.side_network) throw ValidationError("side network is disabled in this model");
  }

  void init(std::mt19937_64& rng) {
    const std::size_t d = cfg_.d_model, hid = cfg_.ffn_dim, V = cfg_.vocab_size;
    const std::size_t k_star = cfg_.retained_frames();
    if (cfg_.volumetric()) {
      std::vector<std::size_t> ext = cfg_.input_shape;
      std::size_t channels = 1;
      for (std::size_t l = 0; l < cfg_.cnn_layers; ++l) {
        const std::string p = "cnn/" + std::to_string(l);
        std::size_t out_c = channels, kernel = 1;
        if (l % 2 == 0) {
          for (std::size_t e : ext) {
            if (e < 2) {
              throw ShapeError("3D encoder: spatial extents " + numkit::shape_string(cfg_.input_shape) +
                               " exhausted before block " + std::to_string(l));
            }
          }
          for (auto& e : ext) e = numkit::conv_out_extent(e, 2, 2);
          out_c = l == 0 ? cfg_.cnn_channels : channels * 2;
          kernel = 2;
        }
        params_.add_constant(p + "/gain", {channels}, 1.0);
        params_.add_constant(p + "/shift", {channels}, 0.0);
        params_.add_uniform(p + "/kernel", {kernel, kernel, kernel, channels, out_c},
                            kernel * kernel * kernel * channels, rng);
        params_.add_constant(p + "/bias", {out_c}, 0.0);
        cnn_channels_.push_back(out_c);
        channels = out_c;
      }
      init_linear(params_, "cnn/proj", ext[0] * ext[1] * ext[2] * channels, d, rng);
    } else {
      widths_2d_ = {cfg_.input_shape[0]};
      while (widths_2d_.back() > d || widths_2d_.size() == 1) {
        widths_2d_.push_back(std::max(d, (widths_2d_.back() + 1) / 2));
      }
      for (std::size_t i = 0; i + 1 < widths_2d_.size(); ++i)
        init_linear(params_, "enc2d/" + std::to_string(i), widths_2d_[i], widths_2d_[i + 1], rng);
    }
    init_linear(params_, "fir", d * cfg_.fir_window, d, rng);
    init_norm(params_, "enc/in_norm", d);
    params_.add_uniform("enc/pos", {k_star, d}, d, rng);
    for (std::size_t l = 0; l < cfg_.encoder_layers; ++l)
      init_encoder_layer(params_, "enc/" + std::to_string(l), d, hid, rng);

    params_.add_uniform("embed", {V, d}, d, rng);
    params_.add_uniform("dec/pos", {cfg_.max_positions, d}, d, rng);
    for (std::size_t l = 0; l < cfg_.decoder_layers; ++l)
      init_decoder_layer(params_, "dec/" + std::to_string(l), d, hid, cfg_.side_network, rng);
    init_linear(params_, "dec/out", d, V, rng);

    if (!cfg_.side_network) return;
    init_linear(params_, "side/fusion/in", cfg_.roi_width, d, rng);
    init_linear(params_, "side/fusion/out", d, d, rng);
    init_norm(params_, "side/enc/in_norm", d);
    params_.add_uniform("side/enc/pos", {k_star, d}, d, rng);
    for (std::size_t l = 0; l < cfg_.side_encoder_layers; ++l)
      init_encoder_layer(params_, "side/enc/" + std::to_string(l), d, hid, rng);
    params_.add_uniform("side/dec/pos", {cfg_.max_positions, d}, d, rng);
    for (std::size_t l = 0; l < cfg_.side_decoder_layers; ++l)
      init_decoder_layer(params_, "side/dec/" + std::to_string(l), d, hid, false, rng);
    init_linear(params_, "side/dec/out", d, V, rng);
  }

  ModelConfig cfg_;
  ParamStore params_;
  std::vector<std::size_t> widths_2d_;
  std::vector<std::size_t> cnn_channels_;
};

}  // namespace predft::model
