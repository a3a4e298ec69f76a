#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "predft/io.hpp"
#include "predft/model/examples.hpp"
#include "predft/model/network.hpp"

namespace predft::model {

struct JointLoss {
  Var total;
  Var main;
  std::optional<Var> side;
};

/// total = L_main + λ·L_side, each a next-token cross-entropy with pad ignored.
inline JointLoss joint_loss(Var main_logits, const std::vector<TokenId>& main_targets, const Var* side_logits,
                            const std::vector<TokenId>& side_targets, double lambda) {
  JointLoss out;
  out.main = numkit::cross_entropy(main_logits, main_targets, Vocab::kPad);
  out.total = out.main;
  if (side_logits) {
    out.side = numkit::cross_entropy(*side_logits, side_targets, Vocab::kPad);
    if (lambda != 0.0) out.total = numkit::add(out.main, numkit::scale(*out.side, lambda));
  }
  return out;
}

/// Decoder input is [bos] + seq, target is seq + [eos].
inline std::vector<TokenId> with_bos(const std::vector<TokenId>& seq) {
  std::vector<TokenId> out{Vocab::kBos};
  out.insert(out.end(), seq.begin(), seq.end());
  return out;
}

inline std::vector<TokenId> with_eos(std::vector<TokenId> seq) {
  seq.push_back(Vocab::kEos);
  return seq;
}

/// Fragment of every decoder input position during teacher forcing: the bos
/// slot shares the first word's frame.
inline std::vector<std::size_t> input_fragments(const Example& e) {
  std::vector<std::size_t> out{e.word_fragments.empty() ? 0 : e.word_fragments.front()};
  out.insert(out.end(), e.word_fragments.begin(), e.word_fragments.end());
  return out;
}

/// Forward both networks on one example.
inline JointLoss example_loss(const PredFT& model, Bound& b, const Example& e) {
  const ModelConfig& cfg = model.config();
  const Var enc = model.encode_main(b, e.fmri);
  const auto inputs = with_bos(e.words);
  if (!cfg.side_network) {
    const Var logits = model.decode_main(b, enc, nullptr, inputs, nullptr);
    return joint_loss(logits, with_eos(e.words), nullptr, {}, cfg.lambda);
  }
  const Var pred = model.encode_side(b, e.rois);
  const PcMask mask = build_pc_mask(input_fragments(e), cfg.retained_frames());
  const Var logits = model.decode_main(b, enc, &pred, inputs, &mask);
  const Var side = model.decode_side(b, pred, with_bos(e.future));
  return joint_loss(logits, with_eos(e.words), &side, with_eos(e.future), cfg.lambda);
}

/// Cosine decay from lr_init at step 0 to lr_final at step total-1.
inline double cosine_lr(std::size_t step, std::size_t total, double lr_init, double lr_final) {
  if (total <= 1) return lr_init;
  const double frac = static_cast<double>(std::min(step, total - 1)) / static_cast<double>(total - 1);
  return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + std::cos(std::numbers::pi * frac));
}

struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  TensorMap m;
  TensorMap v;

  void apply(ParamStore& params, const std::map<std::string, Tensor>& grads, double lr, double decay = 0.0) {
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (const auto& [name, g] : grads) {
      Tensor& p = params.at(name);
      Tensor& mt = m.try_emplace(name, Tensor::zeros(p.shape())).first->second;
      Tensor& vt = v.try_emplace(name, Tensor::zeros(p.shape())).first->second;
      for (std::size_t i = 0; i < p.size(); ++i) {
        mt[i] = beta1 * mt[i] + (1.0 - beta1) * g[i];
        vt[i] = beta2 * vt[i] + (1.0 - beta2) * g[i] * g[i];
        p[i] -= lr * ((mt[i] / c1) / (std::sqrt(vt[i] / c2) + eps) + decay * p[i]);
      }
    }
  }
};

/// One optimizer step.
struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double l_main = 0.0;
  double l_side = 0.0;
  double total = 0.0;

  nlohmann::json to_json() const {
    return {{"step", step}, {"lr", lr}, {"l_main", l_main}, {"l_side", l_side}, {"total", total}};
  }
};

/// Mean main and side loss over a set of examples, without recording.
struct EvalLoss {
  double l_main = 0.0;
  double l_side = 0.0;
};

inline EvalLoss evaluate_loss(const PredFT& model, const std::vector<Example>& examples) {
  EvalLoss out;
  if (examples.empty()) return out;
  for (const auto& e : examples) {
    Tape tape(false);
    Bound b(tape, model.params());
    const JointLoss l = example_loss(model, b, e);
    out.l_main += l.main.value().item();
    if (l.side) out.l_side += l.side->value().item();
  }
  out.l_main /= static_cast<double>(examples.size());
  out.l_side /= static_cast<double>(examples.size());
  return out;
}

/// Optimizer and data-order state for a model under training.
class Trainer {
 public:
  Trainer(PredFT& model, std::size_t total_steps)
      : model_(model), total_steps_(total_steps), rng_(model.config().seed ^ 0x9e3779b97f4a7c15ULL) {}

  /// Gradient of the batch-mean joint loss, then one Adam update.
  StepRecord train_step(const std::vector<const Example*>& batch) {
    if (batch.empty()) throw ValidationError("train_step: empty batch");
    const ModelConfig& cfg = model_.config();
    Tape tape;
    Bound b(tape, model_.params());
    b.enable_dropout(cfg.dropout, rng_);
    std::vector<Var> totals;
    StepRecord rec;
    for (const Example* e : batch) {
      const JointLoss l = example_loss(model_, b, cfg.input_noise > 0.0 ? perturbed(*e, cfg.input_noise) : *e);
      totals.push_back(l.total);
      rec.l_main += l.main.value().item();
      if (l.side) rec.l_side += l.side->value().item();
    }
    Var sum = totals.front();
    for (std::size_t i = 1; i < totals.size(); ++i) sum = numkit::add(sum, totals[i]);
    const Var mean = numkit::scale(sum, 1.0 / static_cast<double>(batch.size()));
    if (!std::isfinite(mean.value().item())) {
      throw NumericError("train_step " + std::to_string(adam_.step) + ": non-finite loss");
    }
    const auto grads = b.gradients(mean);
    rec.step = adam_.step;
    rec.lr = cosine_lr(adam_.step, total_steps_, cfg.lr_init, cfg.lr_final);
    adam_.apply(model_.params(), grads, rec.lr, cfg.weight_decay);
    rec.l_main /= static_cast<double>(batch.size());
    rec.l_side /= static_cast<double>(batch.size());
    rec.total = mean.value().item();
    return rec;
  }

  /// One pass over `train` in a seeded shuffled order.
  std::vector<StepRecord> train_epoch(const std::vector<Example>& train) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng_);
    std::vector<StepRecord> out;
    const std::size_t bs = model_.config().batch_size;
    for (std::size_t i = 0; i < order.size(); i += bs) {
      std::vector<const Example*> batch;
      for (std::size_t j = i; j < std::min(order.size(), i + bs); ++j) batch.push_back(&train[order[j]]);
      out.push_back(train_step(batch));
    }
    ++epoch_;
    return out;
  }

  std::size_t epoch() const { return epoch_; }
  std::size_t total_steps() const { return total_steps_; }
  Adam& adam() { return adam_; }
  const Adam& adam() const { return adam_; }
  std::mt19937_64& rng() { return rng_; }
  const std::mt19937_64& rng() const { return rng_; }
  void set_epoch(std::size_t e) { epoch_ = e; }

 private:
  /// Copy of `e` with fresh Gaussian noise on the fMRI and ROI inputs.
  Example perturbed(const Example& e, double sigma) {
    Example out = e;
    std::normal_distribution<double> n(0.0, sigma);
    for (double& v : out.fmri.storage()) v += n(rng_);
    for (double& v : out.rois.storage()) v += n(rng_);
    return out;
  }

  PredFT& model_;
  std::size_t total_steps_;
  Adam adam_;
  std::mt19937_64 rng_;
  std::size_t epoch_ = 0;
};

inline std::size_t steps_per_epoch(std::size_t examples, std::size_t batch) { return (examples + batch - 1) / batch; }

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<EvalLoss> valid;  ///< after each epoch
  std::optional<std::size_t> best_epoch;  ///< epoch whose weights were kept
};

/// Runs cfg.epochs epochs; `on_epoch` sees the epoch index and validation loss.
/// With cfg.keep_best and a validation split, the weights of the epoch with the
/// lowest validation L_main are restored at the end.
inline TrainHistory train_model(PredFT& model, Trainer& trainer, const std::vector<Example>& train,
                                const std::vector<Example>& valid,
                                const std::function<void(std::size_t, const EvalLoss&)>& on_epoch = {}) {
  if (train.empty()) throw ValidationError("training split produced no examples");
  const bool keep = model.config().keep_best && !valid.empty();
  TrainHistory h;
  TensorMap best;
  double best_loss = std::numeric_limits<double>::infinity();
  while (trainer.epoch() < model.config().epochs) {
    auto steps = trainer.train_epoch(train);
    h.steps.insert(h.steps.end(), steps.begin(), steps.end());
    h.valid.push_back(evaluate_loss(model, valid));
    const std::size_t epoch = trainer.epoch() - 1;
    if (keep && h.valid.back().l_main < best_loss) {
      best_loss = h.valid.back().l_main;
      best = model.params().tensors();
      h.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(epoch, h.valid.back());
  }
  if (h.best_epoch) model.params().assign(best);
  return h;
}

}  // namespace predft::model
