#pragma once

// Subcommands behind the predft executable. Every command takes a JSON run
// configuration, writes its artifacts into a staged directory that is renamed
// into place on success, and leaves config.json there so the run can be
// repeated with `--config <out>/config.json`.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "predft/align.hpp"
#include "predft/data.hpp"
#include "predft/io.hpp"
#include "predft/metrics.hpp"
#include "predft/model.hpp"

namespace predft::cli {

namespace fs = std::filesystem;
using Json = nlohmann::json;

/// Reads `key` into `field` when present, with type errors as ValidationError.
template <typename T>
void read_field(const Json& j, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("config key '") + key + "': " + e.what());
  }
}

/// Rejects keys outside `known` and a mismatched "command".
inline void check_keys(const Json& j, const Json& known, const std::string& command) {
  if (!j.is_object()) throw ValidationError("run config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw ValidationError("unknown config key '" + k + "' for " + command);
  }
  if (j.contains("command") && j.at("command") != command) {
    throw ValidationError("config is for '" + j.at("command").dump() + "', not '" + command + "'");
  }
}

inline data::SplitMode parse_split_mode(const std::string& s) {
  if (s == "within") return data::SplitMode::WithinSubject;
  if (s == "cross") return data::SplitMode::CrossSubject;
  throw ValidationError("split mode must be 'within' or 'cross', got '" + s + "'");
}

// ---- synth -----------------------------------------------------------------

struct SynthConfig {
  data::SynthSpec spec;

  Json to_json() const { return {{"command", "synth"}, {"synth", spec.to_json()}}; }

  static SynthConfig from_json(const Json& j) {
    check_keys(j, SynthConfig{}.to_json(), "synth");
    SynthConfig c;
    if (j.contains("synth")) c.spec = data::SynthSpec::from_json(j.at("synth"));
    c.spec.validate();
    return c;
  }
};

inline void run_synth(const SynthConfig& c, const fs::path& out_dir) {
  const data::Dataset ds = data::synth_dataset(c.spec);
  io::StagedDir out(out_dir);
  data::save_dataset(ds, out.path());
  io::write_json(out.path() / "config.json", c.to_json());
  out.commit();
}

// ---- verify ----------------------------------------------------------------

struct VerifyConfig {
  std::string data;
  std::string subject;  ///< empty: first subject
  std::vector<std::string> rois{"BPC"};
  std::string d_range = "0:8";
  std::string l_range = "1:6";
  std::size_t folds = 10;
  std::size_t inner_folds = 5;
  std::size_t reduced_dim = 20;
  std::uint64_t seed = 1;  ///< seeds the "Random" ROI shorthand

  Json to_json() const {
    return {{"command", "verify"},     {"data", data},         {"subject", subject},
            {"rois", rois},            {"d_range", d_range},   {"l_range", l_range},
            {"folds", folds},          {"inner_folds", inner_folds}, {"reduced_dim", reduced_dim},
            {"seed", seed}};
  }

  static VerifyConfig from_json(const Json& j) {
    check_keys(j, VerifyConfig{}.to_json(), "verify");
    VerifyConfig c;
    read_field(j, "data", c.data);
    read_field(j, "subject", c.subject);
    read_field(j, "rois", c.rois);
    read_field(j, "d_range", c.d_range);
    read_field(j, "l_range", c.l_range);
    read_field(j, "folds", c.folds);
    read_field(j, "inner_folds", c.inner_folds);
    read_field(j, "reduced_dim", c.reduced_dim);
    read_field(j, "seed", c.seed);
    if (c.data.empty()) throw ValidationError("verify needs --data");
    if (c.rois.empty()) throw ValidationError("verify needs at least one ROI");
    if (c.reduced_dim == 0) throw ValidationError("reduced_dim must be positive");
    return c;
  }
};

/// An empty range string gives an empty sweep axis.
inline std::vector<std::size_t> range_or_empty(const std::string& s) {
  return s.empty() ? std::vector<std::size_t>{} : align::parse_range(s);
}

/// "Random" alone means a random voxel set as large as the BPC group.
inline align::RoiSet resolve_roi(const data::RoiAtlas& atlas, const std::string& name, std::uint64_t seed) {
  if (name == "Random") return {name, atlas.random_voxels(seed, atlas.resolve("BPC").size())};
  return {name, atlas.resolve(name)};
}

inline void run_verify(const VerifyConfig& c, const fs::path& out_dir) {
  align::SweepSpec spec;
  spec.d_values = range_or_empty(c.d_range);
  spec.l_values = range_or_empty(c.l_range);
  spec.ridge.folds = c.folds;
  spec.ridge.inner_folds = c.inner_folds;
  spec.ridge.validate();
  spec.reduced_dim = c.reduced_dim;
  const data::Dataset ds = data::load_dataset(c.data);
  const std::string subject = c.subject.empty() ? ds.subjects().front() : c.subject;
  std::vector<align::RoiSet> rois;
  for (const auto& name : c.rois) rois.push_back(resolve_roi(ds.atlas, name, c.seed));

  std::vector<align::ScoreSurface> surfaces;
  if (!spec.d_values.empty() && !spec.l_values.empty()) {
    surfaces = align::score_sweep(align::sweep_stories(ds, subject), rois, spec);
  }

  io::StagedDir out(out_dir);
  io::write_text(out.path() / "scores.csv", align::surfaces_csv(surfaces));
  Json summary = Json::array();
  for (std::size_t i = 0; i < surfaces.size(); ++i) {
    const auto& s = surfaces[i];
    const std::string svg = i == 0 ? "surface.svg" : "surface-" + s.roi_set + ".svg";
    io::write_text(out.path() / svg, align::surface_svg(s));
    Json peaks = Json::object();
    for (std::size_t l : s.l_values) peaks[std::to_string(l)] = s.argmax_d(l);
    summary.push_back({{"roi_set", s.roi_set}, {"base_score", s.base_score}, {"argmax_d", peaks}});
  }
  io::write_json(out.path() / "summary.json", Json{{"subject", subject}, {"surfaces", summary}});
  io::write_json(out.path() / "config.json", c.to_json());
  out.commit();
}

// ---- train -----------------------------------------------------------------

struct TrainConfig {
  std::string data;
  std::string roi = "BPC";
  bool shuffle_fmri = false;
  std::string split_mode = "within";
  model::ModelConfig model;

  model::RunData run_data() const { return {roi, shuffle_fmri, parse_split_mode(split_mode)}; }

  Json to_json() const {
    return {{"command", "train"}, {"data", data},           {"roi", roi},
            {"shuffle_fmri", shuffle_fmri}, {"split_mode", split_mode}, {"model", model.to_json()}};
  }

  static TrainConfig from_json(const Json& j) {
    check_keys(j, TrainConfig{}.to_json(), "train");
    TrainConfig c;
    read_field(j, "data", c.data);
    read_field(j, "roi", c.roi);
    read_field(j, "shuffle_fmri", c.shuffle_fmri);
    read_field(j, "split_mode", c.split_mode);
    if (j.contains("model")) c.model = model::ModelConfig::from_json(j.at("model"));
    c.model.validate();
    parse_split_mode(c.split_mode);
    if (c.data.empty()) throw ValidationError("train needs --data");
    return c;
  }
};

inline Json epoch_line(std::size_t epoch, const model::EvalLoss& v) {
  return {{"epoch", epoch}, {"valid_main", v.l_main}, {"valid_side", v.l_side}};
}

/// Trains on the dataset's training split and writes the checkpoint under
/// `checkpoint/` with one JSON line per optimizer step and per epoch in
/// `log.jsonl`.
inline void run_train(const TrainConfig& c, const fs::path& out_dir,
                      const std::function<void(const std::string&)>& progress = {}) {
  const data::Dataset ds = data::load_dataset(c.data);
  const model::Prepared p = model::prepare_run(ds, c.model, c.run_data());
  model::PredFT net(p.config);
  model::Trainer trainer(net, p.config.epochs * model::steps_per_epoch(p.train.size(), p.config.batch_size));

  const model::TrainHistory h = model::train_model(net, trainer, p.train, p.valid,
                                                   [&](std::size_t epoch, const model::EvalLoss& v) {
                                                     if (progress) progress(epoch_line(epoch, v).dump());
                                                   });
  // Step records followed by the epoch line they belong to.
  const std::size_t per_epoch = model::steps_per_epoch(p.train.size(), p.config.batch_size);
  std::string log;
  for (std::size_t e = 0; e < h.valid.size(); ++e) {
    for (std::size_t s = e * per_epoch; s < std::min(h.steps.size(), (e + 1) * per_epoch); ++s)
      log += h.steps[s].to_json().dump() + "\n";
    log += epoch_line(e, h.valid[e]).dump() + "\n";
  }

  io::StagedDir out(out_dir);
  io::write_text(out.path() / "log.jsonl", log);
  model::save_checkpoint(out.path() / "checkpoint", net, p.vocab, &trainer);
  Json losses = Json::array();
  for (const auto& v : h.valid) losses.push_back({{"main", v.l_main}, {"side", v.l_side}});
  io::write_json(out.path() / "history.json",
                 Json{{"train_examples", p.train.size()},
                      {"valid_examples", p.valid.size()},
                      {"test_examples", p.test.size()},
                      {"best_epoch", h.best_epoch ? Json(*h.best_epoch) : Json(nullptr)},
                      {"valid_loss", losses}});
  io::write_json(out.path() / "config.json", c.to_json());
  out.commit();
}

// ---- decode ----------------------------------------------------------------

struct DecodeConfig {
  std::string checkpoint;  ///< output directory of a train run
  std::string split = "test";
  std::size_t beam_width = 1;
  std::size_t max_length = 48;
  std::uint64_t seed = 1;

  Json to_json() const {
    return {{"command", "decode"}, {"checkpoint", checkpoint}, {"split", split},
            {"beam_width", beam_width}, {"max_length", max_length}, {"seed", seed}};
  }

  static DecodeConfig from_json(const Json& j) {
    check_keys(j, DecodeConfig{}.to_json(), "decode");
    DecodeConfig c;
    read_field(j, "checkpoint", c.checkpoint);
    read_field(j, "split", c.split);
    read_field(j, "beam_width", c.beam_width);
    read_field(j, "max_length", c.max_length);
    read_field(j, "seed", c.seed);
    if (c.checkpoint.empty()) throw ValidationError("decode needs --checkpoint");
    if (c.split != "train" && c.split != "valid" && c.split != "test") {
      throw ValidationError("split must be train, valid or test");
    }
    if (c.beam_width == 0) throw ValidationError("beam width must be positive");
    return c;
  }
};

inline Json pair_to_json(const model::Example& e, const metrics::EvalPair& p) {
  return {{"subject", e.subject}, {"story", e.story},     {"start", e.start},
          {"decoded", p.decoded}, {"truth", p.truth}, {"frame_sizes", p.frame_sizes}};
}

/// Decodes one split of the dataset the checkpoint was trained on into
/// `decoded.jsonl`, one segment per line.
inline void run_decode(const DecodeConfig& c, const fs::path& out_dir) {
  const fs::path train_dir = c.checkpoint;
  const TrainConfig tc = TrainConfig::from_json(io::read_json(train_dir / "config.json"));
  model::Checkpoint ck = model::load_checkpoint(train_dir / "checkpoint");
  const data::Dataset ds = data::load_dataset(tc.data);
  const model::Prepared p = model::prepare_run(ds, tc.model, tc.run_data());
  if (p.vocab.to_json() != ck.vocab.to_json()) {
    throw ValidationError("dataset vocabulary differs from the checkpoint's");
  }
  const auto& examples = c.split == "train" ? p.train : c.split == "valid" ? p.valid : p.test;
  model::ModelConfig cfg = ck.model.config();
  cfg.beam_width = c.beam_width;
  cfg.max_generate = c.max_length;
  model::PredFT net(cfg);
  net.params().assign(ck.model.params().tensors());
  const auto pairs = model::decode_examples(net, ck.vocab, examples);

  io::StagedDir out(out_dir);
  std::string lines;
  for (std::size_t i = 0; i < pairs.size(); ++i) lines += pair_to_json(examples[i], pairs[i]).dump() + "\n";
  io::write_text(out.path() / "decoded.jsonl", lines);
  io::write_json(out.path() / "config.json", c.to_json());
  out.commit();
}

inline std::vector<metrics::EvalPair> read_decoded(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::vector<metrics::EvalPair> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const Json j = Json::parse(line);
      metrics::EvalPair p;
      p.decoded = j.at("decoded").get<metrics::Words>();
      p.truth = j.at("truth").get<metrics::Words>();
      p.frame_sizes = j.at("frame_sizes").get<std::vector<std::size_t>>();
      out.push_back(std::move(p));
    } catch (const Json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

// ---- evaluate / analyze-errors ---------------------------------------------

struct ScoreConfig {
  std::string command;
  std::string decoded;  ///< decoded.jsonl, or a decode output directory
  std::uint64_t seed = 1;

  Json to_json() const { return {{"command", command}, {"decoded", decoded}, {"seed", seed}}; }

  static ScoreConfig from_json(const Json& j, const std::string& command) {
    check_keys(j, ScoreConfig{command, {}}.to_json(), command);
    ScoreConfig c{command, {}};
    read_field(j, "decoded", c.decoded);
    read_field(j, "seed", c.seed);
    if (c.decoded.empty()) throw ValidationError(command + " needs --decoded");
    return c;
  }

  fs::path decoded_file() const {
    const fs::path p = decoded;
    return fs::is_directory(p) ? p / "decoded.jsonl" : p;
  }
};

/// Error probability per position bucket as a polyline chart.
inline std::string histogram_svg(const metrics::PositionHistogram& h) {
  constexpr double W = 480, H = 320, L = 60, R = 20, T = 30, B = 50;
  double hi = 0.0;
  for (double p : h.probability) hi = std::max(hi, p);
  if (hi <= 0.0) hi = 1.0;
  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">error position</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (std::size_t b = 0; b < 10; ++b) {
    const double x = L + (static_cast<double>(b) + 0.5) / 10.0 * (W - L - R);
    const double y = T + (hi - h.probability[b]) / hi * (H - T - B);
    os << (b ? " " : "") << x << ',' << y;
  }
  os << "\"/>\n";
  for (std::size_t b = 0; b < 10; ++b) {
    const double x = L + (static_cast<double>(b) + 0.5) / 10.0 * (W - L - R);
    os << "<text x=\"" << x << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\" font-size=\"11\">"
       << (b + 1) * 10 << "</text>\n";
  }
  os << "<text x=\"" << L - 8 << "\" y=\"" << T + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << hi
     << "</text>\n";
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10
     << "\" text-anchor=\"middle\" font-size=\"12\">position in frame (%)</text>\n";
  os << "</svg>\n";
  return os.str();
}

/// metrics.json, errors.csv, histogram.csv and histogram.svg.
inline void run_evaluate(const ScoreConfig& c, const fs::path& out_dir) {
  const metrics::ScoreReport r = metrics::score_pairs(read_decoded(c.decoded_file()));
  io::StagedDir out(out_dir);
  metrics::write_report(r, out.path());
  io::write_text(out.path() / "histogram.svg", histogram_svg(r.histogram));
  io::write_json(out.path() / "config.json", c.to_json());
  out.commit();
}

inline const char* edit_op_name(metrics::EditOp op) {
  switch (op) {
    case metrics::EditOp::Match: return "match";
    case metrics::EditOp::Substitute: return "substitute";
    case metrics::EditOp::Delete: return "delete";
    case metrics::EditOp::Insert: return "insert";
  }
  return "?";
}

/// Per-segment alignments, error events, position histogram and φ.
inline void run_analyze_errors(const ScoreConfig& c, const fs::path& out_dir) {
  const auto pairs = read_decoded(c.decoded_file());
  if (pairs.empty()) throw ValidationError("no decoded segments to analyze");
  std::vector<metrics::ErrorEvent> events;
  std::string alignments;
  std::size_t cost = 0;
  for (const auto& p : pairs) {
    const auto ops = metrics::edit_alignment(p.truth, p.decoded);
    cost += metrics::edit_cost(ops);
    Json names = Json::array();
    for (auto op : ops) names.push_back(edit_op_name(op));
    alignments += Json{{"truth", p.truth}, {"decoded", p.decoded}, {"ops", names}}.dump() + "\n";
    auto ev = metrics::align_errors(p.decoded, p.truth, p.frame_sizes);
    events.insert(events.end(), ev.begin(), ev.end());
  }
  const auto h = metrics::error_position_distribution(events);
  Json by_kind = Json::object();
  for (const auto& e : events) {
    const std::string k = metrics::error_kind_name(e.kind);
    by_kind[k] = by_kind.value(k, 0) + 1;
  }

  io::StagedDir out(out_dir);
  io::write_text(out.path() / "alignments.jsonl", alignments);
  io::write_text(out.path() / "errors.csv", metrics::errors_csv(events));
  io::write_text(out.path() / "histogram.csv", metrics::histogram_csv(h));
  io::write_text(out.path() / "histogram.svg", histogram_svg(h));
  io::write_json(out.path() / "summary.json",
                 Json{{"segments", pairs.size()},
                      {"edit_cost", cost},
                      {"events", events.size()},
                      {"by_kind", by_kind},
                      {"first_half", h.first_half()},
                      {"last_half", h.last_half()},
                      {"phi", h.empty() ? Json(nullptr) : Json(metrics::info_loss_slope(h))}});
  io::write_json(out.path() / "config.json", c.to_json());
  out.commit();
}

}  // namespace predft::cli
