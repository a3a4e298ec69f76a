#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "predft/cli/commands.hpp"

using namespace predft;
using cli::Json;

namespace {

/// Flags shared by every subcommand.
struct Common {
  std::string out;
  std::string config;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;

  void attach(CLI::App* app) {
    app->add_option("--out", out, "output directory (created atomically)")->required();
    app->add_option("--config", config, "JSON run configuration; flags given on the command line win");
    seed_opt = app->add_option("--seed", seed, "random seed");
  }

  /// Defaults, then the config file, then explicit flags.
  Json base(const Json& defaults) const {
    Json j = defaults;
    if (!config.empty()) {
      const Json file = io::read_json(config);
      if (!file.is_object()) throw ValidationError(config + ": expected a JSON object");
      for (const auto& [k, v] : file.items()) j[k] = v;
    }
    return j;
  }
};

template <typename T>
void set_if(CLI::Option* opt, Json& j, const char* key, const T& value) {
  if (opt && opt->count() > 0) j[key] = value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fMRI-to-text decoding with predictive coding"};
  app.require_subcommand(1);
  std::function<void()> action;

  // synth
  Common synth_c;
  auto* synth = app.add_subcommand("synth", "generate a synthetic listening dataset");
  synth_c.attach(synth);
  std::size_t stories = 0, frames = 0, voxels = 0, subjects = 0, vocab = 0;
  double noise = 0.0;
  std::vector<std::size_t> volume;
  auto* o_stories = synth->add_option("--stories", stories, "stories per subject");
  auto* o_frames = synth->add_option("--frames", frames, "frames per story");
  auto* o_voxels = synth->add_option("--voxels", voxels, "voxels per frame");
  auto* o_subjects = synth->add_option("--subjects", subjects, "subjects");
  auto* o_vocab = synth->add_option("--vocab", vocab, "vocabulary size");
  auto* o_noise = synth->add_option("--noise", noise, "response noise std");
  auto* o_volume = synth->add_option("--volume", volume, "w h d volume layout")->expected(3);
  synth->callback([&] {
    action = [&] {
      Json j = synth_c.base(cli::SynthConfig{}.to_json());
      Json& s = j["synth"];
      set_if(synth_c.seed_opt, s, "seed", synth_c.seed);
      set_if(o_stories, s, "stories", stories);
      set_if(o_frames, s, "frames_per_story", frames);
      set_if(o_voxels, s, "voxels", voxels);
      set_if(o_subjects, s, "subjects", subjects);
      set_if(o_vocab, s, "vocab_size", vocab);
      set_if(o_noise, s, "noise", noise);
      set_if(o_volume, s, "volume_shape", volume);
      cli::run_synth(cli::SynthConfig::from_json(j), synth_c.out);
    };
  });

  // verify
  Common verify_c;
  auto* verify = app.add_subcommand("verify", "prediction-score sweep over (d, l)");
  verify_c.attach(verify);
  std::string v_data, v_subject, d_range, l_range;
  std::vector<std::string> v_rois;
  std::size_t folds = 0, reduced = 0;
  auto* o_vdata = verify->add_option("--data", v_data, "dataset directory");
  auto* o_vsubject = verify->add_option("--subject", v_subject, "subject id (default: first)");
  auto* o_vroi = verify->add_option("--roi", v_rois, "ROI group, region or Random(seed,n); repeatable");
  auto* o_drange = verify->add_option("--d-range", d_range, "prediction distances lo:hi");
  auto* o_lrange = verify->add_option("--l-range", l_range, "prediction lengths lo:hi");
  auto* o_folds = verify->add_option("--folds", folds, "cross-validation folds");
  auto* o_reduced = verify->add_option("--reduced-dim", reduced, "PCA dimension of word features");
  verify->callback([&] {
    action = [&] {
      Json j = verify_c.base(cli::VerifyConfig{}.to_json());
      set_if(verify_c.seed_opt, j, "seed", verify_c.seed);
      set_if(o_vdata, j, "data", v_data);
      set_if(o_vsubject, j, "subject", v_subject);
      set_if(o_vroi, j, "rois", v_rois);
      set_if(o_drange, j, "d_range", d_range);
      set_if(o_lrange, j, "l_range", l_range);
      set_if(o_folds, j, "folds", folds);
      set_if(o_reduced, j, "reduced_dim", reduced);
      cli::run_verify(cli::VerifyConfig::from_json(j), verify_c.out);
    };
  });

  // train
  Common train_c;
  auto* train = app.add_subcommand("train", "train the decoder and save a checkpoint");
  train_c.attach(train);
  std::string t_data, t_roi, split_mode;
  double lambda = 0.0;
  std::size_t epochs = 0;
  auto* o_tdata = train->add_option("--data", t_data, "dataset directory");
  auto* o_troi = train->add_option("--roi", t_roi, "ROI group feeding the side network");
  auto* o_lambda = train->add_option("--lambda", lambda, "side-loss weight");
  auto* o_epochs = train->add_option("--epochs", epochs, "training epochs");
  auto* o_split = train->add_option("--split-mode", split_mode, "within or cross subject");
  auto* o_noside = train->add_flag("--no-side-net", "train without the side network");
  auto* o_shuffle = train->add_flag("--shuffle-fmri", "shuffle frame order within every recording");
  train->callback([&] {
    action = [&] {
      Json j = train_c.base(cli::TrainConfig{}.to_json());
      Json& m = j["model"];
      set_if(train_c.seed_opt, m, "seed", train_c.seed);
      set_if(o_lambda, m, "lambda", lambda);
      set_if(o_epochs, m, "epochs", epochs);
      set_if(o_noside, m, "side_network", false);
      set_if(o_tdata, j, "data", t_data);
      set_if(o_troi, j, "roi", t_roi);
      set_if(o_split, j, "split_mode", split_mode);
      set_if(o_shuffle, j, "shuffle_fmri", true);
      cli::run_train(cli::TrainConfig::from_json(j), train_c.out,
                     [](const std::string& line) { std::cerr << line << '\n'; });
    };
  });

  // decode
  Common decode_c;
  auto* decode = app.add_subcommand("decode", "generate text for a split with a trained checkpoint");
  decode_c.attach(decode);
  std::string checkpoint, split;
  std::size_t beam = 0, max_length = 0;
  auto* o_ck = decode->add_option("--checkpoint", checkpoint, "output directory of a train run");
  auto* o_dsplit = decode->add_option("--split", split, "train, valid or test");
  auto* o_beam = decode->add_option("--beam", beam, "beam width (1 = greedy)");
  auto* o_maxlen = decode->add_option("--max-length", max_length, "maximum generated tokens");
  decode->callback([&] {
    action = [&] {
      Json j = decode_c.base(cli::DecodeConfig{}.to_json());
      set_if(decode_c.seed_opt, j, "seed", decode_c.seed);
      set_if(o_ck, j, "checkpoint", checkpoint);
      set_if(o_dsplit, j, "split", split);
      set_if(o_beam, j, "beam_width", beam);
      set_if(o_maxlen, j, "max_length", max_length);
      cli::run_decode(cli::DecodeConfig::from_json(j), decode_c.out);
    };
  });

  // evaluate and analyze-errors
  Common eval_c, err_c;
  std::string eval_decoded, err_decoded;
  auto* evaluate = app.add_subcommand("evaluate", "BLEU, ROUGE-1 and error positions of decoded text");
  eval_c.attach(evaluate);
  auto* o_edec = evaluate->add_option("--decoded", eval_decoded, "decoded.jsonl or a decode output directory");
  evaluate->callback([&] {
    action = [&] {
      Json j = eval_c.base(cli::ScoreConfig{"evaluate", {}}.to_json());
      set_if(eval_c.seed_opt, j, "seed", eval_c.seed);
      set_if(o_edec, j, "decoded", eval_decoded);
      cli::run_evaluate(cli::ScoreConfig::from_json(j, "evaluate"), eval_c.out);
    };
  });
  auto* analyze = app.add_subcommand("analyze-errors", "word alignments and error-position statistics");
  err_c.attach(analyze);
  auto* o_adec = analyze->add_option("--decoded", err_decoded, "decoded.jsonl or a decode output directory");
  analyze->callback([&] {
    action = [&] {
      Json j = err_c.base(cli::ScoreConfig{"analyze-errors", {}}.to_json());
      set_if(err_c.seed_opt, j, "seed", err_c.seed);
      set_if(o_adec, j, "decoded", err_decoded);
      cli::run_analyze_errors(cli::ScoreConfig::from_json(j, "analyze-errors"), err_c.out);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    action();
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
