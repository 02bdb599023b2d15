#pragma once

// Small shared inputs for the network and training tests.

#include <rom/model.hpp>
#include <rom/scenegen.hpp>
#include <rom/trainer.hpp>

#include <random>
#include <string>
#include <vector>

namespace rom::fixture {

/// A generated pair with at least three detections per view, reduced to
/// exactly `objects` per view without noise.
inline TrainingSample<double> tiny_sample(std::uint64_t seed, int objects = 3, int d_viz = 8, int classes = 4) {
  SceneConfig cfg;
  cfg.d_viz = d_viz;
  cfg.classes = classes;
  for (const ScenePair& p : generate_corpus(cfg, 50, seed)) {
    if (p.view1.size() < objects || p.view2.size() < objects) continue;
    std::mt19937_64 rng(seed);
    TrainingSample<double> s = make_sample<double>(p, objects, 0.0, rng);
    if (!s.supervision.matches.empty()) return s;
  }
  throw Error("no suitable tiny pair");
}

inline std::vector<Box> random_boxes(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 0.45);
  std::vector<Box> out;
  for (int i = 0; i < n; ++i) {
    const double x = u(rng), y = u(rng);
    out.push_back({x, y, x + 0.1 + u(rng), y + 0.1 + u(rng)});
  }
  return out;
}

/// Worst relative finite-difference error of d loss / d `tensor`, where
/// `tensor` is one of the model's parameters and `loss` builds a scalar
/// from the model inside a graph.
inline double parameter_gradient_error(Tensor<double>& tensor,
                                       const std::function<NodeId(Graph<double>&)>& loss, double step = 1e-6) {
  const Tensor<double> point = tensor;
  return gradient_check(
      [&](Graph<double>& g, NodeId x) {
        g.bind(tensor, x);
        return loss(g);
      },
      point, step);
}

/// First differing ScenePair field, or empty when every field is identical.
inline std::string pair_difference(const ScenePair& a, const ScenePair& b) {
  auto same_camera = [](const Camera& x, const Camera& y) {
    return x.rotation == y.rotation && x.translation == y.translation && x.focal == y.focal && x.cx == y.cx &&
           x.cy == y.cy && x.width == y.width && x.height == y.height;
  };
  auto same_view = [&](const View& x, const View& y) -> std::string {
    if (!same_camera(x.camera, y.camera)) return "camera";
    if (x.detections != y.detections) return "detections";
    if (x.features.rows() != y.features.rows() || x.features.cols() != y.features.cols() || x.features != y.features) {
      return "features";
    }
    if (x.rel_distance.rows() != y.rel_distance.rows() || x.rel_distance != y.rel_distance) return "rel_distance";
    return "";
  };
  if (a.id != b.id) return "id";
  if (auto d = same_view(a.view1, b.view1); !d.empty()) return "view1." + d;
  if (auto d = same_view(a.view2, b.view2); !d.empty()) return "view2." + d;
  if (a.gt != b.gt) return "gt";
  if (a.keypoints != b.keypoints) return "keypoints";
  if (a.mean_distance_diff != b.mean_distance_diff) return "mean_distance_diff";
  if (a.mean_angle_deg != b.mean_angle_deg) return "mean_angle_deg";
  if (a.difficulty != b.difficulty) return "difficulty";
  return "";
}

}  // namespace rom::fixture
