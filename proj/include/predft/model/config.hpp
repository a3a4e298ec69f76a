#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "predft/data/recording.hpp"
#include "predft/error.hpp"

namespace predft::model {

using data::PredictionWindow;

/// Network shape, training schedule and input geometry.
///
/// Input geometry (`input_shape`, `roi_width`, `vocab_size`, `tokens_per_frame`)
/// is filled in from the training data before parameters are created.
struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t cnn_layers = 4;
  std::size_t cnn_channels = 4;  ///< channels after the first downsampling block
  std::size_t encoder_layers = 4;
  std::size_t decoder_layers = 4;
  std::size_t side_encoder_layers = 2;
  std::size_t side_decoder_layers = 2;
  std::size_t frames = 5;  ///< k+1 fMRI frames per example
  std::size_t fir_window = 3;
  double lambda = 1.0;
  PredictionWindow window{4, 2};
  bool side_network = true;
  std::size_t max_positions = 128;
  std::size_t max_generate = 48;
  std::size_t beam_width = 1;
  double lr_init = 5e-4;
  double lr_final = 1e-5;
  std::size_t epochs = 40;
  std::size_t batch_size = 4;
  std::size_t train_stride = 4;  ///< frame offset between consecutive training windows
  double input_noise = 1.0;      ///< std of Gaussian noise added to fMRI and ROI inputs while training
  double dropout = 0.1;          ///< training-only, on embeddings and sublayer outputs
  double weight_decay = 0.0;     ///< decoupled, scaled by the learning rate
  bool keep_best = false;        ///< restore the best-validation epoch after training
  std::uint64_t seed = 1;

  /// [voxels] for surface input, [w, h, d] for volumes.
  std::vector<std::size_t> input_shape;
  std::size_t roi_width = 0;
  std::size_t vocab_size = 0;
  double tokens_per_frame = 3.0;

  std::size_t retained_frames() const { return frames - fir_window + 1; }
  std::size_t head_dim() const { return d_model / heads; }
  bool volumetric() const { return input_shape.size() == 3; }

  void validate() const {
    auto positive = [](std::size_t v, const char* what) {
      if (v == 0) throw ValidationError(std::string("config: ") + what + " must be positive");
    };
    positive(d_model, "d_model");
    positive(heads, "heads");
    positive(ffn_dim, "ffn_dim");
    positive(cnn_layers, "cnn_layers");
    positive(cnn_channels, "cnn_channels");
    positive(encoder_layers, "encoder_layers");
    positive(decoder_layers, "decoder_layers");
    positive(side_encoder_layers, "side_encoder_layers");
    positive(side_decoder_layers, "side_decoder_layers");
    positive(frames, "frames");
    positive(fir_window, "fir_window");
    positive(max_positions, "max_positions");
    positive(epochs, "epochs");
    positive(batch_size, "batch_size");
    positive(train_stride, "train_stride");
    positive(beam_width, "beam_width");
    if (d_model % heads != 0) throw ValidationError("config: d_model must be divisible by heads");
    if (!(lambda >= 0.0)) throw ValidationError("config: lambda must be >= 0");
    if (!(input_noise >= 0.0)) throw ValidationError("config: input_noise must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("config: dropout must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ValidationError("config: weight_decay must be >= 0");
    if (fir_window > frames) throw ValidationError("config: fir_window exceeds frames");
    if (!(lr_init > 0.0) || !(lr_final > 0.0)) throw ValidationError("config: learning rates must be positive");
    if (!(tokens_per_frame > 0.0)) throw ValidationError("config: tokens_per_frame must be positive");
    window.validate();
    if (!input_shape.empty() && input_shape.size() != 1 && input_shape.size() != 3) {
      throw ValidationError("config: input_shape must have 1 (surface) or 3 (volume) extents");
    }
    for (std::size_t e : input_shape) positive(e, "input_shape extents");
  }

  /// Geometry must be known before parameters can be built.
  void require_geometry() const {
    validate();
    if (input_shape.empty() || vocab_size == 0 || (side_network && roi_width == 0)) {
      throw ValidationError("config: input geometry has not been set");
    }
    if (!volumetric() && input_shape[0] < d_model) {
      throw ValidationError("config: surface input width must be at least d_model");
    }
  }

  nlohmann::json to_json() const {
    return {{"d_model", d_model},
            {"heads", heads},
            {"ffn_dim", ffn_dim},
            {"cnn_layers", cnn_layers},
            {"cnn_channels", cnn_channels},
            {"encoder_layers", encoder_layers},
            {"decoder_layers", decoder_layers},
            {"side_encoder_layers", side_encoder_layers},
            {"side_decoder_layers", side_decoder_layers},
            {"frames", frames},
            {"fir_window", fir_window},
            {"lambda", lambda},
            {"prediction_distance", window.distance},
            {"prediction_length", window.length},
            {"side_network", side_network},
            {"max_positions", max_positions},
            {"max_generate", max_generate},
            {"beam_width", beam_width},
            {"lr_init", lr_init},
            {"lr_final", lr_final},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"train_stride", train_stride},
            {"input_noise", input_noise},
            {"dropout", dropout},
            {"weight_decay", weight_decay},
            {"keep_best", keep_best},
            {"seed", seed},
            {"input_shape", input_shape},
            {"roi_width", roi_width},
            {"vocab_size", vocab_size},
            {"tokens_per_frame", tokens_per_frame}};
  }

  /// Missing keys keep their defaults; unknown keys are rejected.
  static ModelConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("config: expected a JSON object");
    ModelConfig c;
    const auto known = c.to_json();
    for (const auto& [k, v] : j.items()) {
      if (!known.contains(k)) throw ValidationError("config: unknown key '" + k + "'");
    }
    try {
      auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
      };
      get("d_model", c.d_model);
      get("heads", c.heads);
      get("ffn_dim", c.ffn_dim);
      get("cnn_layers", c.cnn_layers);
      get("cnn_channels", c.cnn_channels);
      get("encoder_layers", c.encoder_layers);
      get("decoder_layers", c.decoder_layers);
      get("side_encoder_layers", c.side_encoder_layers);
      get("side_decoder_layers", c.side_decoder_layers);
      get("frames", c.frames);
      get("fir_window", c.fir_window);
      get("lambda", c.lambda);
      get("prediction_distance", c.window.distance);
      get("prediction_length", c.window.length);
      get("side_network", c.side_network);
      get("max_positions", c.max_positions);
      get("max_generate", c.max_generate);
      get("beam_width", c.beam_width);
      get("lr_init", c.lr_init);
      get("lr_final", c.lr_final);
      get("epochs", c.epochs);
      get("batch_size", c.batch_size);
      get("train_stride", c.train_stride);
      get("input_noise", c.input_noise);
      get("dropout", c.dropout);
      get("weight_decay", c.weight_decay);
      get("keep_best", c.keep_best);
      get("seed", c.seed);
      get("input_shape", c.input_shape);
      get("roi_width", c.roi_width);
      get("vocab_size", c.vocab_size);
      get("tokens_per_frame", c.tokens_per_frame);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
  }
};

}  // namespace predft::model
