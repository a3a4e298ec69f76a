#pragma once

// Checkpoint directory layout:
//   manifest.json + *.bin   tensor container: weights, plus adam/m/<name> and
//                           adam/v/<name> moments when saved from a trainer
//   config.json             ModelConfig
//   optimizer.json          Adam constants, step, epoch, schedule length, RNG state
//   vocab.json              token list

#include <filesystem>
#include <optional>
#include <sstream>
#include <string>

#include "predft/io.hpp"
#include "predft/model/training.hpp"
#include "predft/numkit/tensor_io.hpp"

namespace predft::model {

namespace fs = std::filesystem;

inline constexpr const char* kAdamM = "adam/m/";
inline constexpr const char* kAdamV = "adam/v/";

inline void save_checkpoint(const fs::path& dir, const PredFT& model, const data::Vocab& vocab,
                            const Trainer* trainer = nullptr) {
  TensorMap all = model.params().tensors();
  nlohmann::json opt = {{"step", 0}, {"epoch", 0}, {"total_steps", 0}};
  if (trainer) {
    const Adam& a = trainer->adam();
    for (const auto& [name, t] : a.m) all.emplace(kAdamM + name, t);
    for (const auto& [name, t] : a.v) all.emplace(kAdamV + name, t);
    std::ostringstream rng;
    rng << trainer->rng();
    opt = {{"beta1", a.beta1}, {"beta2", a.beta2},       {"eps", a.eps},          {"step", a.step},
           {"epoch", trainer->epoch()}, {"total_steps", trainer->total_steps()}, {"rng", rng.str()}};
  }
  numkit::save_container(dir, all);
  io::write_json(dir / "config.json", model.config().to_json());
  io::write_json(dir / "optimizer.json", opt);
  io::write_json(dir / "vocab.json", vocab.to_json());
}

struct Checkpoint {
  PredFT model;
  data::Vocab vocab;
  nlohmann::json optimizer;
  TensorMap moments;  ///< adam/m/... and adam/v/... entries
};

inline Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("checkpoint directory " + dir.string() + " does not exist");
  ModelConfig cfg = ModelConfig::from_json(io::read_json(dir / "config.json"));
  Checkpoint ck{PredFT(cfg), data::Vocab::from_json(io::read_json(dir / "vocab.json")),
                io::read_json(dir / "optimizer.json"), {}};
  if (ck.vocab.size() != cfg.vocab_size) throw ValidationError("checkpoint vocabulary size differs from config");
  TensorMap weights;
  for (auto& [name, t] : numkit::load_container(dir)) {
    if (name.rfind(kAdamM, 0) == 0 || name.rfind(kAdamV, 0) == 0) {
      ck.moments.emplace(name, std::move(t));
    } else {
      weights.emplace(name, std::move(t));
    }
  }
  ck.model.params().assign(weights);
  return ck;
}

/// Restores optimizer moments, step, epoch and data-order RNG.
inline void restore_trainer(Trainer& trainer, const Checkpoint& ck) {
  const auto& o = ck.optimizer;
  if (!o.contains("rng")) throw ValidationError("checkpoint has no optimizer state");
  Adam& a = trainer.adam();
  try {
    a.beta1 = o.at("beta1").get<double>();
    a.beta2 = o.at("beta2").get<double>();
    a.eps = o.at("eps").get<double>();
    a.step = o.at("step").get<std::size_t>();
    trainer.set_epoch(o.at("epoch").get<std::size_t>());
    std::istringstream rng(o.at("rng").get<std::string>());
    rng >> trainer.rng();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("optimizer.json: ") + e.what());
  }
  a.m.clear();
  a.v.clear();
  for (const auto& [name, t] : ck.moments) {
    const bool is_m = name.rfind(kAdamM, 0) == 0;
    (is_m ? a.m : a.v).emplace(name.substr(std::string(is_m ? kAdamM : kAdamV).size()), t);
  }
}

}  // namespace predft::model
