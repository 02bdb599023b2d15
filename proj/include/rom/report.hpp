#pragma once

// Match files, evaluation reports and SVG overlays.

#include <rom/corpus_io.hpp>
#include <rom/evalkit.hpp>
#include <rom/model.hpp>
#include <rom/trainer.hpp>

#include <json.hpp>

#include <cstdio>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace rom {

// Match files -------------------------------------------------------------

/// Matching output for one pair as written by `rom match`.
struct PairMatches {
  std::uint64_t id = 0;
  std::vector<Match> matches;
  std::vector<int> unmatched1;
  std::vector<int> unmatched2;
  double alpha = 0.0;
  double score_min = 0.0;  // over object entries of S-bar
  double score_max = 0.0;
  double dustbin = 0.0;
  std::optional<SidePredictions> side1;  // absent for keypoint-only matching
  std::optional<SidePredictions> side2;
};

namespace detail {

inline nlohmann::ordered_json side_json(const SidePredictions& s) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    const PositionPrediction& p = s.positions[i];
    out.push_back({{"label", s.labels[i]}, {"dx", p.dx}, {"dy", p.dy}, {"distance", p.distance}});
  }
  return out;
}

inline SidePredictions side_from_json(const nlohmann::json& j) {
  SidePredictions s;
  for (const auto& d : j) {
    s.labels.push_back(d.at("label").get<int>());
    s.positions.push_back({d.at("dx").get<double>(), d.at("dy").get<double>(), d.at("distance").get<double>()});
  }
  return s;
}

}  // namespace detail

inline nlohmann::ordered_json matches_json(const PairMatches& m) {
  nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
  for (auto [i, j] : m.matches) pairs.push_back({i, j});
  nlohmann::ordered_json j{{"id", m.id},
                           {"matches", pairs},
                           {"unmatched_1", m.unmatched1},
                           {"unmatched_2", m.unmatched2},
                           {"scores", {{"alpha", m.alpha}, {"min", m.score_min}, {"max", m.score_max}, {"dustbin", m.dustbin}}}};
  if (m.side1 && m.side2) {
    j["predictions_1"] = detail::side_json(*m.side1);
    j["predictions_2"] = detail::side_json(*m.side2);
  }
  return j;
}

inline PairMatches matches_from_json(const nlohmann::json& j) {
  PairMatches m;
  m.id = j.at("id").get<std::uint64_t>();
  for (const auto& p : j.at("matches")) m.matches.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
  m.unmatched1 = j.at("unmatched_1").get<std::vector<int>>();
  m.unmatched2 = j.at("unmatched_2").get<std::vector<int>>();
  const auto& s = j.at("scores");
  m.alpha = s.at("alpha").get<double>();
  m.score_min = s.at("min").get<double>();
  m.score_max = s.at("max").get<double>();
  m.dustbin = s.at("dustbin").get<double>();
  if (j.contains("predictions_1") && j.contains("predictions_2")) {
    m.side1 = detail::side_from_json(j.at("predictions_1"));
    m.side2 = detail::side_from_json(j.at("predictions_2"));
  }
  return m;
}

inline void write_matches(const std::string& path, std::span<const PairMatches> all) {
  std::ofstream out = detail::open_out(path);
  for (const PairMatches& m : all) out << matches_json(m).dump() << '\n';
  if (!out) throw Error("write to '" + path + "' failed");
}

inline std::vector<PairMatches> read_matches(const std::string& path) {
  std::vector<PairMatches> all;
  detail::for_each_line(path, [&](const nlohmann::json& j, int) { all.push_back(matches_from_json(j)); });
  return all;
}

/// Summary of a fused augmented score matrix.
inline PairMatches summarize(std::uint64_t id, const Tensor<double>& fused, const Assignment& a, double alpha) {
  PairMatches m;
  m.id = id;
  m.matches = a.matches;
  m.unmatched1 = a.unmatched1;
  m.unmatched2 = a.unmatched2;
  m.alpha = alpha;
  const auto core = fused.topLeftCorner(fused.rows() - 1, fused.cols() - 1);
  m.score_min = core.size() > 0 ? core.minCoeff() : 0.0;
  m.score_max = core.size() > 0 ? core.maxCoeff() : 0.0;
  m.dustbin = fused(fused.rows() - 1, fused.cols() - 1);
  return m;
}

/// Matches one pair. Without a model the object scores are all zero, so the
/// keypoint term alone decides.
template <class T>
PairMatches match_pair(const Model<T>* model, const ScenePair& pair, std::span<const KeypointMatch> keypoints,
                       double alpha, int sinkhorn_iterations) {
  const std::vector<Box> b1 = pair.view1.boxes();
  const std::vector<Box> b2 = pair.view2.boxes();
  if (b1.empty() || b2.empty()) throw Error("pair " + std::to_string(pair.id) + " has an image without detections");
  if (model) {
    PairPrediction p = predict(*model, pair_input<T>(pair), b1, b2, keypoints, alpha, sinkhorn_iterations);
    Tensor<double> fused = p.augmented_scores;
    if (alpha != 0.0) fused += alpha * keypoint_scores(keypoints, b1, b2);
    PairMatches m = summarize(pair.id, fused, p.assignment, alpha);
    m.side1 = std::move(p.side1);
    m.side2 = std::move(p.side2);
    return m;
  }
  const Tensor<double> fused = alpha * keypoint_scores(keypoints, b1, b2);
  return summarize(pair.id, fused, extract_assignment(sinkhorn(fused, sinkhorn_iterations)), alpha);
}

// Reports -----------------------------------------------------------------

struct BinReport {
  std::string name;
  long pairs = 0;
  MatchScores object_wise;
  MatchScores frame_wise;
  std::optional<AuxReport> aux;
};

struct EvalReport {
  std::vector<BinReport> bins;  // "all" first, then easy, hard, very_hard when split
};

namespace detail {

inline BinReport evaluate_bin(const std::string& name, std::span<const ScenePair* const> pairs,
                              std::span<const PairMatches* const> matches) {
  BinReport b;
  b.name = name;
  b.pairs = static_cast<long>(pairs.size());
  std::vector<std::vector<Match>> pred, gt;
  std::vector<AuxSample> aux;
  bool have_aux = !pairs.empty();
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    pred.push_back(matches[k]->matches);
    gt.push_back(pairs[k]->gt);
    if (!matches[k]->side1 || !matches[k]->side2) {
      have_aux = false;
      continue;
    }
    const View* views[2] = {&pairs[k]->view1, &pairs[k]->view2};
    const SidePredictions* sides[2] = {&*matches[k]->side1, &*matches[k]->side2};
    for (int v = 0; v < 2; ++v) {
      if (sides[v]->labels.size() != views[v]->detections.size()) {
        throw Error("pair " + std::to_string(pairs[k]->id) + ": prediction count does not match detections");
      }
      for (std::size_t i = 0; i < sides[v]->labels.size(); ++i) {
        aux.push_back({sides[v]->labels[i], sides[v]->positions[i], &views[v]->detections[i], &views[v]->camera});
      }
    }
  }
  b.object_wise = match_metrics(pred, gt, MetricMode::object_wise);
  b.frame_wise = match_metrics(pred, gt, MetricMode::frame_wise);
  if (have_aux) b.aux = aux_metrics(aux);
  return b;
}

}  // namespace detail

/// Pairs and matches are joined by pair id.
inline EvalReport evaluate(std::span<const ScenePair> corpus, std::span<const PairMatches> matches, bool by_difficulty) {
  std::map<std::uint64_t, const PairMatches*> by_id;
  for (const PairMatches& m : matches) {
    if (!by_id.emplace(m.id, &m).second) throw Error("match file repeats pair id " + std::to_string(m.id));
  }
  std::vector<const ScenePair*> pairs;
  std::vector<const PairMatches*> joined;
  for (const ScenePair& p : corpus) {
    auto it = by_id.find(p.id);
    if (it == by_id.end()) throw Error("no matches for pair id " + std::to_string(p.id));
    for (auto [i, j] : it->second->matches) {
      if (i < 0 || i >= p.view1.size() || j < 0 || j >= p.view2.size()) {
        throw Error("pair " + std::to_string(p.id) + ": match (" + std::to_string(i) + ", " + std::to_string(j) +
                    ") out of range");
      }
    }
    pairs.push_back(&p);
    joined.push_back(it->second);
  }
  EvalReport r;
  r.bins.push_back(detail::evaluate_bin("all", pairs, joined));
  if (by_difficulty) {
    for (Difficulty d : {Difficulty::easy, Difficulty::hard, Difficulty::very_hard}) {
      std::vector<const ScenePair*> p;
      std::vector<const PairMatches*> m;
      for (std::size_t k = 0; k < pairs.size(); ++k) {
        if (pairs[k]->difficulty == d) {
          p.push_back(pairs[k]);
          m.push_back(joined[k]);
        }
      }
      r.bins.push_back(detail::evaluate_bin(to_string(d), p, m));
    }
  }
  return r;
}

namespace detail {

inline nlohmann::ordered_json scores_json(const MatchScores& s) {
  return {{"precision", s.precision}, {"recall", s.recall},   {"f1", s.f1},
          {"correct", s.correct},     {"predicted", s.predicted}, {"ground_truth", s.ground_truth}};
}

inline nlohmann::ordered_json errors_json(const ErrorStats& e) {
  return {{"count", e.count},
          {"mean", e.mean},
          {"median", e.median},
          {"rate_le_0_5m", e.within_half_meter},
          {"rate_le_1_0m", e.within_one_meter}};
}

}  // namespace detail

inline nlohmann::ordered_json report_json(const EvalReport& r) {
  nlohmann::ordered_json bins = nlohmann::ordered_json::array();
  for (const BinReport& b : r.bins) {
    nlohmann::ordered_json j{{"bin", b.name},
                             {"pairs", b.pairs},
                             {"object_wise", detail::scores_json(b.object_wise)},
                             {"frame_wise", detail::scores_json(b.frame_wise)}};
    if (b.aux) {
      j["aux"] = {{"objects", b.aux->objects},
                  {"accuracy", b.aux->accuracy},
                  {"position", detail::errors_json(b.aux->position)},
                  {"distance", detail::errors_json(b.aux->distance)}};
    } else {
      j["aux"] = nullptr;
    }
    bins.push_back(std::move(j));
  }
  return {{"report", "rom-eval"}, {"version", 1}, {"bins", bins}};
}

/// Plain-text tables: rows are metrics, columns are bins.
inline std::string report_text(const EvalReport& r) {
  std::ostringstream out;
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return std::string(buf);
  };
  auto row = [&](const std::string& label, auto cell) {
    out << std::left << std::setw(22) << label;
    for (const BinReport& b : r.bins) out << std::right << std::setw(11) << cell(b);
    out << '\n';
  };
  row("", [](const BinReport& b) { return b.name; });
  row("pairs", [](const BinReport& b) { return std::to_string(b.pairs); });
  for (MetricMode mode : {MetricMode::object_wise, MetricMode::frame_wise}) {
    auto pick = [mode](const BinReport& b) -> const MatchScores& {
      return mode == MetricMode::object_wise ? b.object_wise : b.frame_wise;
    };
    const std::string m = to_string(mode);
    auto cell = [&](double MatchScores::*field) {
      return [&, field](const BinReport& b) { return b.pairs > 0 ? num(pick(b).*field) : std::string("-"); };
    };
    row(m + " precision", cell(&MatchScores::precision));
    row(m + " recall", cell(&MatchScores::recall));
    row(m + " F1", cell(&MatchScores::f1));
  }
  const bool any_aux = std::any_of(r.bins.begin(), r.bins.end(), [](const BinReport& b) { return b.aux.has_value(); });
  if (any_aux) {
    auto aux = [&](auto f) {
      return [f, &num](const BinReport& b) { return b.aux ? num(f(*b.aux)) : std::string("-"); };
    };
    row("class accuracy", aux([](const AuxReport& a) { return a.accuracy; }));
    row("position mean [m]", aux([](const AuxReport& a) { return a.position.mean; }));
    row("position median [m]", aux([](const AuxReport& a) { return a.position.median; }));
    row("position <= 0.5 m", aux([](const AuxReport& a) { return a.position.within_half_meter; }));
    row("position <= 1.0 m", aux([](const AuxReport& a) { return a.position.within_one_meter; }));
    row("distance mean [m]", aux([](const AuxReport& a) { return a.distance.mean; }));
    row("distance median [m]", aux([](const AuxReport& a) { return a.distance.median; }));
    row("distance <= 0.5 m", aux([](const AuxReport& a) { return a.distance.within_half_meter; }));
    row("distance <= 1.0 m", aux([](const AuxReport& a) { return a.distance.within_one_meter; }));
  }
  return out.str();
}

// SVG ---------------------------------------------------------------------

/// Both images side by side with their boxes. Green lines: correct matches,
/// red: wrong matches, yellow: missed ground-truth matches.
inline std::string overlay_svg(const ScenePair& pair, std::span<const Match> predicted, double scale = 0.5) {
  const double w = pair.view1.camera.width * scale;
  const double h = pair.view1.camera.height * scale;
  const double gap = 20.0;
  std::ostringstream s;
  s << std::fixed << std::setprecision(1);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * w + gap << "\" height=\"" << h << "\">\n";
  for (int v = 0; v < 2; ++v) {
    const View& view = v == 0 ? pair.view1 : pair.view2;
    const double ox = v == 0 ? 0.0 : w + gap;
    s << "<rect x=\"" << ox << "\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"#f4f4f4\" stroke=\"#888\"/>\n";
    for (int i = 0; i < view.size(); ++i) {
      const Box& b = view.detections[static_cast<std::size_t>(i)].box;
      s << "<rect x=\"" << ox + b.x_min * w << "\" y=\"" << b.y_min * h << "\" width=\"" << b.width() * w
        << "\" height=\"" << b.height() * h << "\" fill=\"none\" stroke=\"#3060c0\"/>\n";
      s << "<text x=\"" << ox + b.x_min * w + 2 << "\" y=\"" << b.y_min * h + 12 << "\" font-size=\"11\">" << i
        << "</text>\n";
    }
  }
  const std::set<Match> truth(pair.gt.begin(), pair.gt.end());
  const std::set<Match> pred(predicted.begin(), predicted.end());
  auto line = [&](Match m, const char* color) {
    const Box& a = pair.view1.detections[static_cast<std::size_t>(m.first)].box;
    const Box& b = pair.view2.detections[static_cast<std::size_t>(m.second)].box;
    s << "<line x1=\"" << a.center_x() * w << "\" y1=\"" << a.center_y() * h << "\" x2=\"" << w + gap + b.center_x() * w
      << "\" y2=\"" << b.center_y() * h << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
  };
  for (Match m : pair.gt) {
    if (!pred.count(m)) line(m, "yellow");
  }
  for (Match m : predicted) line(m, truth.count(m) ? "green" : "red");
  s << "</svg>\n";
  return s.str();
}

}  // namespace rom
