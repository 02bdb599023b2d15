#pragma once

// Synthetic indoor scenes observed by two pinhole cameras.
//
// World frame: x, y horizontal, z up, meters. Camera frame: x right, y down,
// z forward. Objects are axis-aligned boxes resting on or above the floor.
//
// Randomness: every generator draws from std::mt19937_64 seeded through
// std::seed_seq{seed low, seed high, stream tag}. Distribution objects are
// the standard library's, so streams are reproducible within one standard
// library implementation but not across implementations.

#include <rom/box.hpp>
#include <rom/diffcore.hpp>
#include <rom/matcher.hpp>

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace rom {

enum class Difficulty { easy, hard, very_hard };

inline const char* to_string(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return "easy";
    case Difficulty::hard: return "hard";
    case Difficulty::very_hard: return "very_hard";
  }
  return "?";
}

inline Difficulty difficulty_from_string(const std::string& s) {
  if (s == "easy") return Difficulty::easy;
  if (s == "hard") return Difficulty::hard;
  if (s == "very_hard") return Difficulty::very_hard;
  throw Error("unknown difficulty '" + s + "'");
}

struct SceneConfig {
  int object_count = 10;
  int classes = 10;
  int d_viz = 512;
  double room_half_extent = 5.0;  // room spans [-R, R] in x and y
  double room_height = 3.0;
  double min_center_distance = 1.0;
  double min_half_extent = 0.25;
  double max_half_extent = 0.6;
  double max_elevation = 1.0;  // extra height above the floor
  int image_width = 1024;
  int image_height = 768;
  double focal = 730.0;  // pixels, about 70 degrees horizontal field of view
  double min_box_side_px = 25.0;
  double occlusion_overlap = 0.7;
  double view_noise = 1.0;       // epsilon; scales all appearance perturbation
  double detection_noise = 0.1;  // per-detection i.i.d. share of the perturbation
  double class_signal = 0.5;
  double keypoint_density = 5.0;
  double outlier_rate = 0.05;
  std::optional<Difficulty> target;  // restrict pairs to one difficulty bin
  int max_retries = 200;
  std::uint64_t class_seed = 0x5EEDC1A55ULL;

  void validate() const {
    if (object_count < 3) throw Error("scene config: object_count must be >= 3");
    if (classes < 2) throw Error("scene config: classes must be >= 2");
    if (d_viz < 1) throw Error("scene config: d_viz must be >= 1");
    if (!(min_half_extent > 0.0) || max_half_extent < min_half_extent) {
      throw Error("scene config: half extents must satisfy 0 < min <= max");
    }
    if (!(focal > 0.0) || image_width < 1 || image_height < 1) throw Error("scene config: invalid camera intrinsics");
    if (keypoint_density < 0.0 || outlier_rate < 0.0 || view_noise < 0.0) {
      throw Error("scene config: densities and noise must be non-negative");
    }
  }
};

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

// Scene -------------------------------------------------------------------

struct SceneObject {
  int instance = 0;
  int label = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_extent = Eigen::Vector3d::Ones();
  Eigen::Vector3d front = Eigen::Vector3d::UnitX();  // unit, horizontal
  Eigen::VectorXd latent;                            // unit-norm identity, length D_viz
  Eigen::MatrixXd view_basis;                        // D_viz x 3, maps view direction to appearance
};

struct Scene {
  std::vector<SceneObject> objects;
  double room_half_extent = 0.0;
  double room_height = 0.0;
};

inline Scene generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto rng = make_rng(seed, 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, cfg.classes - 1);
  const double margin = cfg.max_half_extent + 0.1;
  const double span = cfg.room_half_extent - margin;
  if (span <= 0.0) throw Error("scene config: room too small for object extents");

  Scene scene;
  scene.room_half_extent = cfg.room_half_extent;
  scene.room_height = cfg.room_height;
  for (int k = 0; k < cfg.object_count; ++k) {
    SceneObject o;
    o.instance = k;
    o.label = label(rng);
    for (int d = 0; d < 3; ++d) {
      o.half_extent[d] = cfg.min_half_extent + (cfg.max_half_extent - cfg.min_half_extent) * unit(rng);
    }
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
      Eigen::Vector3d p(-span + 2.0 * span * unit(rng), -span + 2.0 * span * unit(rng),
                        o.half_extent.z() + cfg.max_elevation * unit(rng));
      placed = std::all_of(scene.objects.begin(), scene.objects.end(), [&](const SceneObject& other) {
        return (other.position - p).norm() > cfg.min_center_distance;
      });
      if (placed) o.position = p;
    }
    if (!placed) {
      throw Error("infeasible placement: object " + std::to_string(k) + " of " + std::to_string(cfg.object_count) +
                  " after " + std::to_string(cfg.max_retries) + " attempts");
    }
    const double yaw = 2.0 * std::numbers::pi * unit(rng);
    o.front = Eigen::Vector3d(std::cos(yaw), std::sin(yaw), 0.0);
    o.latent.resize(cfg.d_viz);
    for (int d = 0; d < cfg.d_viz; ++d) o.latent[d] = gauss(rng);
    o.latent.normalize();
    o.view_basis.resize(cfg.d_viz, 3);
    const double s = 1.0 / std::sqrt(double(cfg.d_viz));
    for (Eigen::Index i = 0; i < o.view_basis.size(); ++i) o.view_basis.data()[i] = s * gauss(rng);
    scene.objects.push_back(std::move(o));
  }
  return scene;
}

/// Unit class directions shared by every scene generated with `class_seed`.
inline Eigen::MatrixXd class_embeddings(const SceneConfig& cfg) {
  auto rng = make_rng(cfg.class_seed, 2);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd e(cfg.classes, cfg.d_viz);
  for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = gauss(rng);
  e.rowwise().normalize();
  return e;
}

// Camera ------------------------------------------------------------------

struct Camera {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world -> camera
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double focal = 730.0;
  double cx = 512.0;
  double cy = 384.0;
  int width = 1024;
  int height = 768;

  static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const SceneConfig& cfg) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    Eigen::Vector3d right = forward.cross(Eigen::Vector3d::UnitZ());
    if (right.norm() < 1e-9) throw Error("look_at: viewing direction parallel to up axis");
    right.normalize();
    const Eigen::Vector3d down = forward.cross(right);
    Camera c;
    c.rotation.row(0) = right;
    c.rotation.row(1) = down;
    c.rotation.row(2) = forward;
    c.translation = -c.rotation * eye;
    c.focal = cfg.focal;
    c.width = cfg.image_width;
    c.height = cfg.image_height;
    c.cx = 0.5 * cfg.image_width;
    c.cy = 0.5 * cfg.image_height;
    return c;
  }

  [[nodiscard]] Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
  [[nodiscard]] Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const { return rotation * world + translation; }

  /// Pixel coordinates of a camera-frame point with z > 0.
  [[nodiscard]] Eigen::Vector2d project_camera(const Eigen::Vector3d& pc) const {
    return {focal * pc.x() / pc.z() + cx, focal * pc.y() / pc.z() + cy};
  }

  /// World point at Euclidean `distance` along the ray through normalized
  /// image point (u, v).
  [[nodiscard]] Eigen::Vector3d back_project(double u, double v, double distance) const {
    const Eigen::Vector3d ray((u * width - cx) / focal, (v * height - cy) / focal, 1.0);
    const Eigen::Vector3d pc = ray.normalized() * distance;
    return rotation.transpose() * (pc - translation);
  }

  void validate() const {
    const double orth = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (orth > 1e-9 || std::abs(rotation.determinant() - 1.0) > 1e-9) throw Error("camera rotation is not a proper rotation");
    if (!(focal > 0.0)) throw Error("camera focal length must be positive");
  }
};

// Pairs -------------------------------------------------------------------

struct Detection {
  int instance = 0;
  int label = 0;
  Box box;             // normalized
  double dx = 0.0;     // projected center minus box center, normalized units
  double dy = 0.0;
  double distance = 0.0;  // camera center to object center, meters
  friend bool operator==(const Detection&, const Detection&) = default;
};

struct View {
  Camera camera;
  std::vector<Detection> detections;
  Tensor<float> features;          // n x D_viz
  Tensor<double> rel_distance;     // n x n, symmetric, zero diagonal

  [[nodiscard]] int size() const { return static_cast<int>(detections.size()); }
  [[nodiscard]] std::vector<Box> boxes() const {
    std::vector<Box> b;
    for (const auto& d : detections) b.push_back(d.box);
    return b;
  }
};

struct ScenePair {
  std::uint64_t id = 0;
  View view1;
  View view2;
  std::vector<Match> gt;  // (index in view1, index in view2)
  std::vector<KeypointMatch> keypoints;
  double mean_distance_diff = 0.0;  // meters
  double mean_angle_deg = 0.0;
  Difficulty difficulty = Difficulty::easy;
};

inline Difficulty classify_difficulty(double mean_distance_diff, double mean_angle_deg) {
  if (mean_distance_diff <= 4.0 && mean_angle_deg <= 45.0) return Difficulty::easy;
  if (mean_distance_diff <= 8.0 && mean_angle_deg <= 90.0) return Difficulty::hard;
  return Difficulty::very_hard;
}

inline Difficulty classify_difficulty(const ScenePair& p) {
  if (p.gt.empty()) throw Error("classify_difficulty needs at least one ground-truth match");
  return classify_difficulty(p.mean_distance_diff, p.mean_angle_deg);
}

namespace detail {

inline double angle_between(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

inline const SceneObject& object_by_instance(const Scene& s, int instance) {
  for (const auto& o : s.objects) {
    if (o.instance == instance) return o;
  }
  throw Error("unknown instance " + std::to_string(instance));
}

/// Visible detections in painter's order, before shuffling.
inline std::vector<Detection> observe(const Scene& scene, const Camera& cam, const SceneConfig& cfg) {
  struct Candidate {
    Detection det;
    Box pixel_box;
  };
  std::vector<Candidate> candidates;
  const double w = cam.width;
  const double h = cam.height;
  for (const SceneObject& o : scene.objects) {
    const Eigen::Vector3d center = cam.to_camera(o.position);
    if (center.z() <= 0.3) continue;
    double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
    bool behind = false;
    for (int corner = 0; corner < 8; ++corner) {
      const Eigen::Vector3d offset((corner & 1) ? 1.0 : -1.0, (corner & 2) ? 1.0 : -1.0, (corner & 4) ? 1.0 : -1.0);
      const Eigen::Vector3d pc = cam.to_camera(o.position + o.half_extent.cwiseProduct(offset));
      if (pc.z() <= 0.05) {
        behind = true;
        break;
      }
      const Eigen::Vector2d px = cam.project_camera(pc);
      x0 = std::min(x0, px.x());
      y0 = std::min(y0, px.y());
      x1 = std::max(x1, px.x());
      y1 = std::max(y1, px.y());
    }
    if (behind) continue;
    x0 = std::clamp(x0, 0.0, w);
    x1 = std::clamp(x1, 0.0, w);
    y0 = std::clamp(y0, 0.0, h);
    y1 = std::clamp(y1, 0.0, h);
    if (x1 - x0 < cfg.min_box_side_px || y1 - y0 < cfg.min_box_side_px) continue;
    const Eigen::Vector2d pc = cam.project_camera(center);
    Candidate c;
    c.pixel_box = {x0, y0, x1, y1};
    c.det.instance = o.instance;
    c.det.label = o.label;
    c.det.box = {x0 / w, y0 / h, x1 / w, y1 / h};
    c.det.dx = pc.x() / w - c.det.box.center_x();
    c.det.dy = pc.y() / h - c.det.box.center_y();
    c.det.distance = (o.position - cam.center()).norm();
    candidates.push_back(c);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.det.distance < b.det.distance; });
  std::vector<Detection> visible;
  std::vector<Box> kept;
  for (const Candidate& c : candidates) {
    const bool occluded = std::any_of(kept.begin(), kept.end(), [&](const Box& nearer) {
      return intersection_area(nearer, c.pixel_box) >= cfg.occlusion_overlap * c.pixel_box.area();
    });
    if (occluded) continue;
    kept.push_back(c.pixel_box);
    visible.push_back(c.det);
  }
  return visible;
}

}  // namespace detail

/// Detections, ground-truth matches, relative distances and difficulty
/// statistics for two views of `scene`. Detection order is shuffled.
inline ScenePair project_pair(const Scene& scene, const Camera& cam1, const Camera& cam2, std::uint64_t seed,
                              const SceneConfig& cfg) {
  cam1.validate();
  cam2.validate();
  auto rng = make_rng(seed, 3);
  ScenePair pair;
  pair.id = seed;
  pair.view1.camera = cam1;
  pair.view2.camera = cam2;
  pair.view1.detections = detail::observe(scene, cam1, cfg);
  pair.view2.detections = detail::observe(scene, cam2, cfg);
  std::shuffle(pair.view1.detections.begin(), pair.view1.detections.end(), rng);
  std::shuffle(pair.view2.detections.begin(), pair.view2.detections.end(), rng);

  for (View* v : {&pair.view1, &pair.view2}) {
    const int n = v->size();
    v->rel_distance = Tensor<double>::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const auto& a = detail::object_by_instance(scene, v->detections[static_cast<std::size_t>(i)].instance);
        const auto& b = detail::object_by_instance(scene, v->detections[static_cast<std::size_t>(j)].instance);
        v->rel_distance(i, j) = (a.position - b.position).norm();
      }
    }
  }

  const Eigen::Vector3d c1 = cam1.center();
  const Eigen::Vector3d c2 = cam2.center();
  double dsum = 0.0;
  double asum = 0.0;
  for (int i = 0; i < pair.view1.size(); ++i) {
    for (int j = 0; j < pair.view2.size(); ++j) {
      const auto& a = pair.view1.detections[static_cast<std::size_t>(i)];
      const auto& b = pair.view2.detections[static_cast<std::size_t>(j)];
      if (a.instance != b.instance) continue;
      pair.gt.emplace_back(i, j);
      const Eigen::Vector3d p = detail::object_by_instance(scene, a.instance).position;
      dsum += std::abs(a.distance - b.distance);
      asum += detail::angle_between(c1 - p, c2 - p);
    }
  }
  if (pair.gt.size() < 2) {
    throw Error("fewer than two co-visible objects (" + std::to_string(pair.gt.size()) + ")");
  }
  const double k = static_cast<double>(pair.gt.size());
  pair.mean_distance_diff = dsum / k;
  pair.mean_angle_deg = asum / k * 180.0 / std::numbers::pi;
  pair.difficulty = classify_difficulty(pair.mean_distance_diff, pair.mean_angle_deg);
  return pair;
}

/// f_viz = normalize(latent + class_signal * class + eps * view perturbation).
/// The view term grows with the angle between the object's front and the
/// direction to the camera, so matched features drift apart with the angle
/// between the two viewing rays.
inline void synth_visual_features(ScenePair& pair, const Scene& scene, const SceneConfig& cfg, std::uint64_t seed) {
  const Eigen::MatrixXd classes = class_embeddings(cfg);
  auto rng = make_rng(seed, 4);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double iid_scale = cfg.detection_noise / std::sqrt(double(cfg.d_viz));
  for (View* v : {&pair.view1, &pair.view2}) {
    const Eigen::Vector3d eye = v->camera.center();
    v->features.resize(v->size(), cfg.d_viz);
    for (int i = 0; i < v->size(); ++i) {
      const Detection& det = v->detections[static_cast<std::size_t>(i)];
      const SceneObject& o = detail::object_by_instance(scene, det.instance);
      const Eigen::Vector3d toward = (eye - o.position).normalized();
      Eigen::VectorXd f = o.latent + cfg.class_signal * classes.row(o.label).transpose() +
                          cfg.view_noise * (o.view_basis * (toward - o.front));
      for (int d = 0; d < cfg.d_viz; ++d) f[d] += cfg.view_noise * iid_scale * gauss(rng);
      f.normalize();
      v->features.row(i) = f.cast<float>().transpose();
    }
  }
}

/// Keypoint pairs per ground-truth match, Poisson(density * max(0, cos angle))
/// with endpoints uniform in the two boxes, plus Poisson(outlier_rate *
/// density * |gt|) outliers between random boxes.
inline std::vector<KeypointMatch> synth_keypoint_matches(const ScenePair& pair, const Scene& scene, double density,
                                                         double outlier_rate, std::uint64_t seed) {
  if (density < 0.0 || outlier_rate < 0.0) throw Error("keypoint density and outlier rate must be non-negative");
  std::vector<KeypointMatch> out;
  if (density == 0.0) return out;
  auto rng = make_rng(seed, 5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto inside = [&](const Box& b) {
    return std::pair{b.x_min + b.width() * unit(rng), b.y_min + b.height() * unit(rng)};
  };
  auto emit = [&](const Box& a, const Box& b) {
    auto [u1, v1] = inside(a);
    auto [u2, v2] = inside(b);
    out.push_back({u1, v1, u2, v2});
  };
  const Eigen::Vector3d c1 = pair.view1.camera.center();
  const Eigen::Vector3d c2 = pair.view2.camera.center();
  for (auto [i, j] : pair.gt) {
    const auto& a = pair.view1.detections[static_cast<std::size_t>(i)];
    const auto& b = pair.view2.detections[static_cast<std::size_t>(j)];
    const Eigen::Vector3d p = detail::object_by_instance(scene, a.instance).position;
    const double visibility = std::max(0.0, std::cos(detail::angle_between(c1 - p, c2 - p)));
    const double mean = density * visibility;
    const int count = mean > 0.0 ? std::poisson_distribution<int>(mean)(rng) : 0;
    for (int k = 0; k < count; ++k) emit(a.box, b.box);
  }
  const double outlier_mean = outlier_rate * density * static_cast<double>(pair.gt.size());
  const int outliers = outlier_mean > 0.0 ? std::poisson_distribution<int>(outlier_mean)(rng) : 0;
  std::uniform_int_distribution<int> pick1(0, pair.view1.size() - 1);
  std::uniform_int_distribution<int> pick2(0, pair.view2.size() - 1);
  for (int k = 0; k < outliers; ++k) {
    const int i = pick1(rng);
    const int j = pick2(rng);
    emit(pair.view1.detections[static_cast<std::size_t>(i)].box, pair.view2.detections[static_cast<std::size_t>(j)].box);
  }
  return out;
}

/// Maximum yaw offset between the two cameras around their shared target,
/// per requested bin. Rejection on the measured bin follows.
inline std::pair<double, double> yaw_range(std::optional<Difficulty> target) {
  if (!target) return {0.0, 180.0};
  switch (*target) {
    case Difficulty::easy: return {0.0, 40.0};
    case Difficulty::hard: return {35.0, 95.0};
    case Difficulty::very_hard: return {85.0, 180.0};
  }
  return {0.0, 180.0};
}

/// Samples two cameras looking at a shared object until the pair has at
/// least two co-visible objects and falls in the requested bin.
inline ScenePair generate_pair(const Scene& scene, const SceneConfig& cfg, std::uint64_t seed) {
  auto rng = make_rng(seed, 6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, scene.objects.size() - 1);
  const double r = scene.room_half_extent - 0.3;
  auto [yaw_lo, yaw_hi] = yaw_range(cfg.target);
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    const Eigen::Vector3d focus = scene.objects[pick(rng)].position;
    const Eigen::Vector3d eye1(-r + 2.0 * r * unit(rng), -r + 2.0 * r * unit(rng), 1.2 + 0.6 * unit(rng));
    Eigen::Vector3d arm = eye1 - focus;
    arm.z() = 0.0;
    if (arm.norm() < 1.0) continue;
    const double yaw = (yaw_lo + (yaw_hi - yaw_lo) * unit(rng)) * std::numbers::pi / 180.0 * (unit(rng) < 0.5 ? -1.0 : 1.0);
    const Eigen::Vector3d rotated = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()) * arm;
    const double stretch = 0.6 + unit(rng);
    Eigen::Vector3d eye2 = focus + rotated * stretch;
    eye2.x() = std::clamp(eye2.x(), -r, r);
    eye2.y() = std::clamp(eye2.y(), -r, r);
    eye2.z() = 1.2 + 0.6 * unit(rng);
    if ((eye2 - focus).head<2>().norm() < 1.0) continue;
    auto jitter = [&] { return Eigen::Vector3d(unit(rng) - 0.5, unit(rng) - 0.5, 0.5 * (unit(rng) - 0.5)); };
    const Camera cam1 = Camera::look_at(eye1, focus + jitter(), cfg);
    const Camera cam2 = Camera::look_at(eye2, focus + jitter(), cfg);
    ScenePair pair;
    try {
      pair = project_pair(scene, cam1, cam2, seed + static_cast<std::uint64_t>(attempt), cfg);
    } catch (const Error&) {
      continue;
    }
    if (cfg.target && pair.difficulty != *cfg.target) continue;
    pair.id = seed;
    synth_visual_features(pair, scene, cfg, seed);
    pair.keypoints = synth_keypoint_matches(pair, scene, cfg.keypoint_density, cfg.outlier_rate, seed);
    return pair;
  }
  throw Error("no valid camera pair after " + std::to_string(cfg.max_retries) + " attempts");
}

/// `count` pairs, each from its own scene. Scene seeds that fail placement or
/// camera sampling are skipped deterministically.
inline std::vector<ScenePair> generate_corpus(const SceneConfig& cfg, int count, std::uint64_t seed) {
  std::vector<ScenePair> corpus;
  auto seeds = make_rng(seed, 7);
  int failures = 0;
  while (static_cast<int>(corpus.size()) < count) {
    const std::uint64_t s = seeds();
    try {
      Scene scene = generate_scene(cfg, s);
      corpus.push_back(generate_pair(scene, cfg, s));
    } catch (const Error&) {
      if (++failures > 10 * count + 100) throw Error("corpus generation failed repeatedly; check scene config");
    }
  }
  return corpus;
}

}  // namespace rom
