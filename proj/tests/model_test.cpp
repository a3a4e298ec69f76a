#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>

#include "predft/model.hpp"
#include "predft/numkit/grad_check.hpp"
#include "model_util.hpp"
#include "test_util.hpp"

using namespace predft;
using namespace predft::model;
using namespace predft::testing;

namespace fs = std::filesystem;

// ---- predictive-coding mask ----------------------------------------------

TEST(PcMask, WorkedExample) {
  const PcMask m = build_pc_mask({0, 0, 1, 2, 5}, 3);
  const bool expect[5][3] = {{1, 1, 1}, {1, 1, 1}, {0, 1, 1}, {0, 0, 1}, {0, 0, 1}};
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(m.mask(i, j), expect[i][j]) << i << "," << j;
}

TEST(PcMask, MatchesBruteForceRule) {
  std::size_t checked = 0;
  for (std::size_t ks = 1; ks <= 4; ++ks) {
    for (std::size_t n = 0; n <= 6; ++n) {
      std::vector<std::size_t> cur;
      monotone_vectors(n, ks + 1, cur, [&](const std::vector<std::size_t>& frag) {
        const PcMask m = build_pc_mask(frag, ks);
        ASSERT_EQ(m.mask.rows(), n);
        ASSERT_EQ(m.mask.cols(), ks);
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t lo = frag[i] < ks - 1 ? frag[i] : ks - 1;
          for (std::size_t j = 0; j < ks; ++j) ASSERT_EQ(m.mask(i, j), j >= lo);
          ASSERT_GE(m.mask.row_count(i), 1u);
        }
        ++checked;
      });
    }
  }
  EXPECT_GT(checked, 1000u);
}

TEST(PcMask, Errors) {
  EXPECT_THROW(build_pc_mask({0, 2, 1}, 3), ValidationError);
  EXPECT_THROW(build_pc_mask({0}, 0), ValidationError);
}

TEST(PcMask, BudgetFragments) {
  EXPECT_EQ(budget_fragments(7, 2.5), (std::vector<std::size_t>{0, 0, 0, 1, 1, 2, 2}));
  EXPECT_TRUE(budget_fragments(0, 3.0).empty());
}

TEST(PcMask, MaskedRowsDoNotReachLogits) {
  // One decoder layer: position i only sees the predictive rows its own mask
  // allows, because self-attention precedes the predictive sublayer.
  std::mt19937_64 rng(3);
  ModelConfig c = tiny_config();
  c.frames = 6;
  c.fir_window = 2;  // k* = 5
  const PredFT m(c);
  const std::size_t ks = c.retained_frames();
  for (int trial = 0; trial < 20; ++trial) {
    Example e = random_example(c, rng);
    std::uniform_int_distribution<std::size_t> frag(0, ks - 1);
    std::vector<std::size_t> f(e.words.size());
    for (auto& v : f) v = frag(rng);
    std::sort(f.begin(), f.end());
    e.word_fragments = f;
    const auto fr = input_fragments(e);
    const Tensor pred = side_rep(m, e);
    const Tensor base = main_logits(m, e, &pred);
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, fr.size() - 1)(rng);
    const std::size_t lo = std::min(fr[i], ks - 1);
    Tensor moved = pred;
    for (std::size_t j = 0; j < lo; ++j)
      for (std::size_t d = 0; d < c.d_model; ++d) moved(j, d) += 5.0 * std::sin(1.0 + j + d + trial);
    const Tensor after = main_logits(m, e, &moved);
    EXPECT_TRUE(rows_equal(base, after, i)) << "trial " << trial << " token " << i;
    if (lo < ks) {
      Tensor allowed = pred;
      for (std::size_t d = 0; d < c.d_model; ++d) allowed(lo, d) += 5.0;
      EXPECT_FALSE(rows_equal(base, main_logits(m, e, &allowed), i)) << "trial " << trial;
    }
  }
}

TEST(PcMask, DeepDecoderIgnoresRowsMaskedForWholePrefix) {
  std::mt19937_64 rng(4);
  ModelConfig c = tiny_config();
  c.frames = 6;
  c.decoder_layers = 3;
  const PredFT m(c);
  Example e = random_example(c, rng);
  e.word_fragments = {2, 2, 3, 3, 4, 4, 4, 4, 4, 4};
  e.word_fragments.resize(e.words.size(), 4);
  const Tensor pred = side_rep(m, e);
  const Tensor base = main_logits(m, e, &pred);
  Tensor moved = pred;
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t d = 0; d < c.d_model; ++d) moved(j, d) -= 3.0;
  EXPECT_EQ(base, main_logits(m, e, &moved));
}

// ---- attention and causality ---------------------------------------------

TEST(Attention, RowsSumToOneAndRespectMasks) {
  std::mt19937_64 rng(5);
  ModelConfig c = tiny_config();
  c.decoder_layers = 2;
  const PredFT m(c);
  const Example e = random_example(c, rng);
  std::vector<DecoderTrace> traces;
  main_logits(m, e, nullptr, &traces);
  ASSERT_EQ(traces.size(), 2u);
  const PcMask pc = build_pc_mask(input_fragments(e), c.retained_frames());
  for (const auto& t : traces) {
    for (const auto* kind : {&t.self, &t.cross, &t.pc}) {
      ASSERT_EQ(kind->size(), c.heads);
      for (const Tensor& w : *kind) {
        for (std::size_t i = 0; i < w.rows(); ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < w.cols(); ++j) {
            s += w(i, j);
            if (kind == &t.self && j > i) {
              EXPECT_EQ(w(i, j), 0.0);
            }
            if (kind == &t.pc && !pc.mask(i, j)) {
              EXPECT_EQ(w(i, j), 0.0);
            }
          }
          EXPECT_NEAR(s, 1.0, 1e-12);
        }
      }
    }
  }
}

TEST(Decoder, LaterTokensDoNotChangeEarlierLogits) {
  std::mt19937_64 rng(6);
  ModelConfig c = tiny_config();
  c.decoder_layers = 3;
  const PredFT m(c);
  for (int trial = 0; trial < 10; ++trial) {
    const Example e = random_example(c, rng);
    const Tensor base = main_logits(m, e);
    const std::size_t cut = 1 + trial % (e.words.size() - 1);
    Example changed = e;
    for (std::size_t k = cut; k < changed.words.size(); ++k)
      changed.words[k] = kFirstWord + (changed.words[k] + 3 - kFirstWord) % (c.vocab_size - kFirstWord);
    const Tensor after = main_logits(m, changed);
    for (std::size_t i = 0; i <= cut; ++i) EXPECT_TRUE(rows_equal(base, after, i)) << trial << " row " << i;
    EXPECT_FALSE(rows_equal(base, after, cut + 1));
  }
}

// ---- encoders ------------------------------------------------------------

TEST(Encoder2d, ShapeAndAffineInInput) {
  std::mt19937_64 rng(7);
  ModelConfig c = tiny_config();
  c.input_shape = {100};
  const PredFT m(c);
  auto enc = [&](const Tensor& x) {
    Tape tape(false);
    Bound b(tape, m.params());
    return m.encode_2d(b, x).value();
  };
  const Tensor a = random_normal({100, c.frames}, rng), z = random_normal({100, c.frames}, rng);
  const Tensor fa = enc(a), fz = enc(z);
  EXPECT_EQ(fa.shape(), (Shape{c.frames, c.d_model}));
  Tensor mix({100, c.frames});
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 0.3 * a[i] + 0.7 * z[i];
  const Tensor fm = enc(mix);
  for (std::size_t i = 0; i < fm.size(); ++i) EXPECT_NEAR(fm[i], 0.3 * fa[i] + 0.7 * fz[i], 1e-10);

  // Zero frames map every row to the same bias vector.
  const Tensor f0 = enc(Tensor({100, c.frames}, 0.0));
  for (std::size_t t = 1; t < c.frames; ++t)
    for (std::size_t d = 0; d < c.d_model; ++d) EXPECT_EQ(f0(t, d), f0(0, d));
}

TEST(Encoder2d, FrameRowsAreIndependent) {
  std::mt19937_64 rng(8);
  const ModelConfig c = tiny_config();
  const PredFT m(c);
  Tensor x = random_normal({32, c.frames}, rng);
  auto enc = [&](const Tensor& in) {
    Tape tape(false);
    Bound b(tape, m.params());
    return m.encode_2d(b, in).value();
  };
  const Tensor base = enc(x);
  for (std::size_t v = 0; v < 32; ++v) x(v, 1) += 1.0;
  const Tensor after = enc(x);
  for (std::size_t t = 0; t < c.frames; ++t) EXPECT_EQ(rows_equal(base, after, t), t != 1) << t;
}

TEST(Encoder3d, DeskVolumeShape) {
  ModelConfig c;
  c.input_shape = {16, 16, 8};
  c.frames = 10;
  c.roi_width = 4;
  c.vocab_size = 10;
  const PredFT m(c);
  std::mt19937_64 rng(9);
  Tape tape(false);
  Bound b(tape, m.params());
  const Tensor out = m.encode_3d(b, random_normal({16, 16, 8, 10}, rng)).value();
  EXPECT_EQ(out.shape(), (Shape{10, 64}));
  EXPECT_TRUE(out.all_finite());
}

TEST(Encoder3d, TooManyDownsamplingBlocksIsAShapeError) {
  ModelConfig c = tiny_config();
  c.input_shape = {4, 4, 2};
  c.cnn_layers = 8;
  EXPECT_THROW(PredFT{c}, ShapeError);
}

TEST(Fir, RowFusesItsWindowOnly) {
  std::mt19937_64 rng(10);
  ModelConfig c = tiny_config();
  c.frames = 6;
  c.fir_window = 3;
  const PredFT m(c);
  Tensor x = random_normal({6, c.d_model}, rng);
  auto run = [&](const Tensor& in) {
    Tape tape(false);
    Bound b(tape, m.params());
    return m.fir(b, tape.constant(in)).value();
  };
  const Tensor base = run(x);
  ASSERT_EQ(base.shape(), (Shape{4, c.d_model}));
  for (std::size_t d = 0; d < c.d_model; ++d) x(4, d) += 1.0;
  const Tensor after = run(x);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(rows_equal(base, after, t), t + 3 <= 4) << t;

  ModelConfig w1 = tiny_config();
  w1.fir_window = 1;
  const PredFT m1(w1);
  Tape tape(false);
  Bound b(tape, m1.params());
  EXPECT_EQ(m1.fir(b, tape.constant(x)).value().rows(), 6u);
  EXPECT_THROW(m1.fir(b, tape.constant(Tensor({0, c.d_model}))), ShapeError);
}

// ---- losses --------------------------------------------------------------

TEST(JointLoss, LambdaZeroIsMainLoss) {
  std::mt19937_64 rng(11);
  ModelConfig c = tiny_config();
  c.lambda = 0.0;
  const PredFT m(c);
  const Example e = random_example(c, rng);
  Tape tape(false);
  Bound b(tape, m.params());
  const JointLoss l = example_loss(m, b, e);
  EXPECT_EQ(l.total.value().item(), l.main.value().item());
  ASSERT_TRUE(l.side.has_value());
  EXPECT_GT(l.side->value().item(), 0.0);
}

TEST(JointLoss, UniformLogitsGiveScaledLogVocab) {
  const std::size_t V = 9;
  for (double lambda : {0.0, 0.5, 1.0, 2.0}) {
    Tape tape(false);
    const Var main = tape.constant(Tensor({4, V}, 0.0));
    const Var side = tape.constant(Tensor({6, V}, 1.5));
    const JointLoss l = joint_loss(main, {5, 6, 7, 3}, &side, {5, 4, 8, 4, 6, 3}, lambda);
    EXPECT_NEAR(l.total.value().item(), (1.0 + lambda) * std::log(static_cast<double>(V)), 1e-12);
  }
}

TEST(JointLoss, SideLossLeavesEmbeddingGradientUnchanged) {
  std::mt19937_64 rng(12);
  const Example e = random_example(tiny_config(), rng);
  auto embed_grad = [&](double lambda) {
    ModelConfig c = tiny_config();
    c.lambda = lambda;
    const PredFT m(c);
    Tape tape;
    Bound b(tape, m.params());
    const JointLoss l = example_loss(m, b, e);
    return b.gradients(l.total).at("embed");
  };
  const Tensor g0 = embed_grad(0.0), g1 = embed_grad(1.0);
  EXPECT_GT(numkit::max_abs(g0), 0.0);
  EXPECT_LE(numkit::max_abs_diff(g0, g1), 1e-12);
}

TEST(JointLoss, EndToEndGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  const ModelConfig c = tiny_config();
  const PredFT m(c);
  const Example e = random_example(c, rng);
  const std::vector<std::string> names = {"enc2d/0/w", "fir/w",          "enc/0/self/q/w", "dec/0/pc/v/w",
                                          "dec/0/ffn/in/w", "side/fusion/in/w", "side/dec/0/cross/k/w",
                                          "embed"};
  std::size_t checked = 0;
  for (const auto& name : names) {
    const Tensor& p = m.params().at(name);
    std::vector<std::size_t> coords;
    for (std::size_t k = 0; k < 8; ++k) coords.push_back((k * 7919 + 13) % p.size());
    const auto rep = numkit::grad_check(
        [&](Tape& tape, Var x) {
          Bound b(tape, m.params());
          b.substitute(name, x);
          // The side decoder reads the table through a stop-gradient.
          const JointLoss l = example_loss(m, b, e);
          return name == "embed" ? l.main : l.total;
        },
        p, 1e-3, 1e-5, coords);
    EXPECT_TRUE(rep.passed) << name << " rel " << rep.max_rel_error << " at " << rep.worst_index;
    checked += rep.checked;
  }
  EXPECT_EQ(checked, 64u);
}

TEST(Schedule, CosineEndpointsAndMonotone) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 5e-4, 1e-5), 5e-4);
  EXPECT_DOUBLE_EQ(cosine_lr(99, 100, 5e-4, 1e-5), 1e-5);
  EXPECT_NEAR(cosine_lr(0, 101, 5e-4, 1e-5) + cosine_lr(100, 101, 5e-4, 1e-5),
              2.0 * cosine_lr(50, 101, 5e-4, 1e-5), 1e-15);
  for (std::size_t s = 1; s < 100; ++s) EXPECT_LE(cosine_lr(s, 100, 5e-4, 1e-5), cosine_lr(s - 1, 100, 5e-4, 1e-5));
}

// ---- training ------------------------------------------------------------

TEST(Training, OverfitsOneBatch) {
  std::mt19937_64 rng(14);
  ModelConfig c = tiny_config();
  c.lr_init = 3e-3;
  c.lr_final = 3e-3;
  PredFT m(c);
  const Example e = random_example(c, rng);
  Trainer t(m, 200);
  const double first = t.train_step({&e}).total;
  for (int s = 1; s < 200; ++s) t.train_step({&e});
  EXPECT_LT(loss_value(m, e), 0.1 * first);
}

TEST(Training, SameSeedSameRun) {
  std::mt19937_64 rng(15);
  ModelConfig c = tiny_config();
  c.dropout = 0.2;
  c.input_noise = 0.5;
  std::vector<Example> train;
  for (int i = 0; i < 6; ++i) train.push_back(random_example(c, rng));
  auto run = [&] {
    PredFT m(c);
    Trainer t(m, 6);
    t.train_epoch(train);
    t.train_epoch(train);
    return m.params().tensors();
  };
  EXPECT_EQ(run(), run());
}

TEST(Training, KeepBestRestoresLowestValidationEpoch) {
  std::mt19937_64 rng(16);
  ModelConfig c = tiny_config();
  c.epochs = 4;
  c.keep_best = true;
  std::vector<Example> train, valid;
  for (int i = 0; i < 4; ++i) train.push_back(random_example(c, rng));
  for (int i = 0; i < 2; ++i) valid.push_back(random_example(c, rng));
  PredFT m(c);
  Trainer t(m, c.epochs * steps_per_epoch(train.size(), c.batch_size));
  const auto h = train_model(m, t, train, valid);
  ASSERT_TRUE(h.best_epoch.has_value());
  ASSERT_EQ(h.valid.size(), 4u);
  for (const auto& v : h.valid) EXPECT_GE(v.l_main, h.valid[*h.best_epoch].l_main);
  EXPECT_DOUBLE_EQ(evaluate_loss(m, valid).l_main, h.valid[*h.best_epoch].l_main);
}

TEST(SideNetwork, DisabledModelIgnoresRois) {
  std::mt19937_64 rng(17);
  const ModelConfig c = tiny_config(false);
  const PredFT m(c);
  Example e = random_example(c, rng);
  const double base = loss_value(m, e);
  const auto text = generate(m, e, 8);
  e.rois = random_normal({c.frames, 6}, rng);
  EXPECT_EQ(loss_value(m, e), base);
  EXPECT_EQ(generate(m, e, 8), text);
  EXPECT_EQ(m.params().tensors().count("side/fusion/in/w"), 0u);
}

// ---- generation ----------------------------------------------------------

TEST(Generate, GreedyMatchesTeacherForcedArgmax) {
  std::mt19937_64 rng(18);
  for (bool side : {true, false}) {
    const ModelConfig c = tiny_config(side);
    const PredFT m(c);
    for (int trial = 0; trial < 5; ++trial) {
      const Example e = random_example(c, rng);
      const auto out = generate(m, e, 7);
      ASSERT_LE(out.size(), 7u);
      const auto best = teacher_forced_argmax(m, e, with_bos(out));
      for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(best[i], out[i]) << i;
      if (out.size() < 7) {
        EXPECT_EQ(best[out.size()], Vocab::kEos);
      }
      for (TokenId t : out) EXPECT_TRUE(emittable(t) && t != Vocab::kEos);
    }
  }
}

TEST(Generate, ZeroLengthAndBeamWidthOne) {
  std::mt19937_64 rng(19);
  const ModelConfig c = tiny_config();
  const PredFT m(c);
  const Example e = random_example(c, rng);
  EXPECT_TRUE(generate(m, e, 0).empty());
  EXPECT_EQ(generate(m, e, 6, 1), generate(m, e, 6));
  EXPECT_THROW(generate(m, e, 6, 0), ValidationError);
  const auto beam = generate(m, e, 6, 3);
  EXPECT_LE(beam.size(), 6u);
}

TEST(Generate, BeamScoresAtLeastGreedy) {
  std::mt19937_64 rng(20);
  const ModelConfig c = tiny_config();
  const PredFT m(c);
  auto score = [&](const Example& e, const std::vector<TokenId>& out) {
    Tape tape(false);
    Bound b(tape, m.params());
    const Encoded x = encode_example(m, b, e);
    const auto in = with_bos(out);
    const Tensor logits = decode_logits(m, b, x, in);
    const auto target = with_eos(out);
    double s = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) s += log_softmax_row(logits, i)[target[i]];
    return s;
  };
  for (int trial = 0; trial < 5; ++trial) {
    const Example e = random_example(c, rng);
    const auto g = generate(m, e, 40), bm = generate(m, e, 40, 4);
    if (g.size() < 40 && bm.size() < 40) {
      EXPECT_GE(score(e, bm), score(e, g) - 1e-9);
    }
  }
}

// ---- checkpoints ---------------------------------------------------------

TEST(Checkpoint, RoundTripIsBitIdentical) {
  std::mt19937_64 rng(21);
  ModelConfig c = tiny_config();
  c.dropout = 0.1;
  std::vector<Example> train;
  for (int i = 0; i < 4; ++i) train.push_back(random_example(c, rng));
  std::vector<std::string> words;
  for (TokenId i = kFirstWord; i < c.vocab_size; ++i) words.push_back("w" + std::to_string(i));
  const data::Vocab vocab = data::Vocab::build(words);
  ASSERT_EQ(vocab.size(), c.vocab_size);

  PredFT straight(c);
  Trainer ts(straight, 4);
  ts.train_epoch(train);
  ts.train_epoch(train);

  PredFT first(c);
  Trainer tf(first, 4);
  tf.train_epoch(train);
  const fs::path dir = fs::temp_directory_path() / "predft_model_test_ck";
  fs::remove_all(dir);
  save_checkpoint(dir, first, vocab, &tf);
  Checkpoint ck = load_checkpoint(dir);
  EXPECT_EQ(ck.model.params().tensors(), first.params().tensors());
  EXPECT_EQ(main_logits(ck.model, train[0]), main_logits(first, train[0]));
  Trainer tr(ck.model, 4);
  restore_trainer(tr, ck);
  EXPECT_EQ(tr.epoch(), 1u);
  tr.train_epoch(train);
  EXPECT_EQ(ck.model.params().tensors(), straight.params().tensors());
  fs::remove_all(dir);
}

TEST(Checkpoint, MissingDirectoryIsAValidationError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/predft/ck"), ValidationError);
}

// ---- config --------------------------------------------------------------

TEST(Config, JsonRoundTripAndRejections) {
  const ModelConfig c = tiny_config();
  const ModelConfig back = ModelConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_THROW(ModelConfig::from_json({{"bogus", 1}}), ValidationError);
  EXPECT_THROW(ModelConfig::from_json({{"d_model", "wide"}}), ValidationError);
  EXPECT_THROW(ModelConfig::from_json({{"d_model", 10}, {"heads", 4}}), ValidationError);
  EXPECT_THROW(ModelConfig::from_json({{"dropout", 1.0}}), ValidationError);
  ModelConfig g;
  EXPECT_THROW(PredFT{g}, ValidationError);
}
