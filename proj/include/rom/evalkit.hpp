#pragma once

// Matching and side-task metrics.
//
// Object-wise scores pool correct/predicted/ground-truth counts over all
// pairs. Frame-wise scores average per-pair precision, recall and F1
// separately:
//   recall is averaged over pairs with ground-truth matches,
//   precision over pairs with predicted matches,
//   F1 over pairs with either.

#include <rom/box.hpp>
#include <rom/encoder.hpp>
#include <rom/matcher.hpp>
#include <rom/scenegen.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

namespace rom {

enum class MetricMode { object_wise, frame_wise };

inline const char* to_string(MetricMode m) { return m == MetricMode::object_wise ? "object-wise" : "frame-wise"; }

struct MatchScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long correct = 0;
  long predicted = 0;
  long ground_truth = 0;
  long pairs = 0;
};

inline double f1_score(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

inline void require_one_to_one(std::span<const Match> matches) {
  std::set<int> left, right;
  for (auto [i, j] : matches) {
    if (!left.insert(i).second || !right.insert(j).second) {
      throw Error("match list repeats index (" + std::to_string(i) + ", " + std::to_string(j) + ")");
    }
  }
}

inline long count_correct(std::span<const Match> predicted, std::span<const Match> gt) {
  const std::set<Match> truth(gt.begin(), gt.end());
  return static_cast<long>(std::count_if(predicted.begin(), predicted.end(), [&](const Match& m) { return truth.count(m) > 0; }));
}

inline MatchScores match_metrics(std::span<const std::vector<Match>> predicted, std::span<const std::vector<Match>> gt,
                                 MetricMode mode) {
  if (predicted.size() != gt.size()) throw Error("match_metrics: prediction and ground-truth pair counts differ");
  MatchScores s;
  s.pairs = static_cast<long>(gt.size());
  double p_sum = 0.0, r_sum = 0.0, f_sum = 0.0;
  long p_n = 0, r_n = 0, f_n = 0;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    require_one_to_one(predicted[k]);
    require_one_to_one(gt[k]);
    const long c = count_correct(predicted[k], gt[k]);
    const long np = static_cast<long>(predicted[k].size());
    const long ng = static_cast<long>(gt[k].size());
    s.correct += c;
    s.predicted += np;
    s.ground_truth += ng;
    const double p = np > 0 ? double(c) / double(np) : 0.0;
    const double r = ng > 0 ? double(c) / double(ng) : 0.0;
    if (np > 0) {
      p_sum += p;
      ++p_n;
    }
    if (ng > 0) {
      r_sum += r;
      ++r_n;
    }
    if (np > 0 || ng > 0) {
      f_sum += f1_score(p, r);
      ++f_n;
    }
  }
  if (mode == MetricMode::object_wise) {
    s.precision = s.predicted > 0 ? double(s.correct) / double(s.predicted) : 0.0;
    s.recall = s.ground_truth > 0 ? double(s.correct) / double(s.ground_truth) : 0.0;
    s.f1 = f1_score(s.precision, s.recall);
  } else {
    s.precision = p_n > 0 ? p_sum / double(p_n) : 0.0;
    s.recall = r_n > 0 ? r_sum / double(r_n) : 0.0;
    s.f1 = f_n > 0 ? f_sum / double(f_n) : 0.0;
  }
  return s;
}

/// Detection -> ground-truth index, or -1. A detection claims the ground
/// truth box of maximal IoU when that IoU exceeds 0.5; among detections
/// claiming the same box the highest IoU wins (lowest index on ties).
inline std::vector<int> assign_detections_to_gt(std::span<const Box> detections, std::span<const Box> truth) {
  std::vector<int> claim(detections.size(), -1);
  std::vector<double> claim_iou(detections.size(), 0.0);
  for (std::size_t d = 0; d < detections.size(); ++d) {
    double best = 0.5;
    for (std::size_t t = 0; t < truth.size(); ++t) {
      const double v = iou(detections[d], truth[t]);
      if (v > best) {
        best = v;
        claim[d] = static_cast<int>(t);
      }
    }
    claim_iou[d] = best;
  }
  std::vector<int> out(detections.size(), -1);
  std::vector<int> winner(truth.size(), -1);
  for (std::size_t d = 0; d < detections.size(); ++d) {
    if (claim[d] < 0) continue;
    int& w = winner[static_cast<std::size_t>(claim[d])];
    if (w < 0 || claim_iou[d] > claim_iou[static_cast<std::size_t>(w)]) w = static_cast<int>(d);
  }
  for (std::size_t t = 0; t < truth.size(); ++t) {
    if (winner[t] >= 0) out[static_cast<std::size_t>(winner[t])] = static_cast<int>(t);
  }
  return out;
}

// Side tasks --------------------------------------------------------------

struct ErrorStats {
  long count = 0;
  double mean = 0.0;
  double median = 0.0;
  double within_half_meter = 0.0;  // rate of errors <= 0.5 m
  double within_one_meter = 0.0;   // rate of errors <= 1.0 m
};

struct AuxReport {
  long objects = 0;
  double accuracy = 0.0;
  ErrorStats position;
  ErrorStats distance;
};

inline ErrorStats error_stats(std::vector<double> errors) {
  ErrorStats s;
  s.count = static_cast<long>(errors.size());
  if (errors.empty()) return s;
  double sum = 0.0;
  long half = 0, one = 0;
  for (double e : errors) {
    sum += e;
    half += e <= 0.5 ? 1 : 0;
    one += e <= 1.0 ? 1 : 0;
  }
  s.mean = sum / double(errors.size());
  s.within_half_meter = double(half) / double(errors.size());
  s.within_one_meter = double(one) / double(errors.size());
  std::sort(errors.begin(), errors.end());
  const std::size_t mid = errors.size() / 2;
  s.median = errors.size() % 2 == 1 ? errors[mid] : 0.5 * (errors[mid - 1] + errors[mid]);
  return s;
}

/// One object's side-task prediction against its ground truth.
struct AuxSample {
  int predicted_label = 0;
  PositionPrediction predicted;
  const Detection* truth = nullptr;
  const Camera* camera = nullptr;
};

/// 3D point recovered from a box, an offset in normalized units and a
/// distance in meters.
inline Eigen::Vector3d recover_position(const Camera& cam, const Box& box, double dx, double dy, double distance) {
  return cam.back_project(box.center_x() + dx, box.center_y() + dy, distance);
}

inline AuxReport aux_metrics(std::span<const AuxSample> samples) {
  AuxReport r;
  r.objects = static_cast<long>(samples.size());
  long correct = 0;
  std::vector<double> position_errors, distance_errors;
  for (const AuxSample& s : samples) {
    const Detection& t = *s.truth;
    correct += s.predicted_label == t.label ? 1 : 0;
    distance_errors.push_back(std::abs(s.predicted.distance - t.distance));
    const Eigen::Vector3d p = recover_position(*s.camera, t.box, s.predicted.dx, s.predicted.dy, s.predicted.distance);
    const Eigen::Vector3d q = recover_position(*s.camera, t.box, t.dx, t.dy, t.distance);
    position_errors.push_back((p - q).norm());
  }
  r.accuracy = samples.empty() ? 0.0 : double(correct) / double(samples.size());
  r.position = error_stats(std::move(position_errors));
  r.distance = error_stats(std::move(distance_errors));
  return r;
}

}  // namespace rom
