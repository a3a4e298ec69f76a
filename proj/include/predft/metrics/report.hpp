#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "predft/io.hpp"
#include "predft/metrics/errors.hpp"
#include "predft/metrics/text.hpp"

namespace predft::metrics {

/// One decoded segment with its truth and the truth's per-frame word counts.
struct EvalPair {
  Words decoded;
  Words truth;
  std::vector<std::size_t> frame_sizes;
};

struct ScoreReport {
  std::vector<double> bleu;  ///< BLEU-1..4, corpus level
  Rouge rouge;               ///< mean over pairs
  PositionHistogram histogram;
  double phi = 0.0;
  std::size_t pairs = 0;
  std::vector<ErrorEvent> events;

  nlohmann::json to_json() const {
    nlohmann::json j;
    for (std::size_t n = 0; n < bleu.size(); ++n) j["bleu_" + std::to_string(n + 1)] = bleu[n];
    j["rouge1"] = {{"precision", rouge.precision}, {"recall", rouge.recall}, {"f1", rouge.f1}};
    j["error_histogram"] = {{"probability", histogram.probability},
                            {"counts", histogram.counts},
                            {"first_half", histogram.first_half()},
                            {"last_half", histogram.last_half()},
                            {"empty", histogram.empty()}};
    j["phi"] = phi;
    j["pairs"] = pairs;
    return j;
  }
};

inline ScoreReport score_pairs(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) throw ValidationError("no decoded segments to score");
  ScoreReport r;
  BleuStats stats;
  for (const auto& p : pairs) {
    stats += bleu_stats(p.decoded, {p.truth});
    const Rouge g = rouge1(p.decoded, p.truth);
    r.rouge.precision += g.precision;
    r.rouge.recall += g.recall;
    r.rouge.f1 += g.f1;
    auto ev = align_errors(p.decoded, p.truth, p.frame_sizes);
    r.events.insert(r.events.end(), ev.begin(), ev.end());
  }
  const double n = static_cast<double>(pairs.size());
  r.rouge.precision /= n;
  r.rouge.recall /= n;
  r.rouge.f1 /= n;
  r.bleu = bleu_from_stats(stats);
  r.histogram = error_position_distribution(r.events);
  r.phi = info_loss_slope(r.histogram);
  r.pairs = pairs.size();
  return r;
}

inline std::string errors_csv(const std::vector<ErrorEvent>& events) {
  std::string s = "kind,truth_pos,frame,pospct\n";
  for (const auto& e : events) {
    s += std::string(error_kind_name(e.kind)) + "," + std::to_string(e.truth_pos) + "," +
         std::to_string(e.frame) + "," + std::to_string(e.pospct) + "\n";
  }
  return s;
}

inline std::string histogram_csv(const PositionHistogram& h) {
  std::string s = "bucket,probability\n";
  for (std::size_t b = 0; b < 10; ++b)
    s += std::to_string((b + 1) * 10) + "," + io::format_double(h.probability[b]) + "\n";
  return s;
}

/// metrics.json, errors.csv and histogram.csv under `dir`.
inline void write_report(const ScoreReport& r, const std::filesystem::path& dir) {
  io::write_json(dir / "metrics.json", r.to_json());
  io::write_text(dir / "errors.csv", errors_csv(r.events));
  io::write_text(dir / "histogram.csv", histogram_csv(r.histogram));
}

}  // namespace predft::metrics
