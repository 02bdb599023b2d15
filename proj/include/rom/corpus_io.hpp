#pragma once

// Scene-pair corpora as JSON Lines, one pair per line, plus the scene
// config and keypoint-match files read by the command line tool.
//
// Each line carries "schema": 1. Features and relative distances are
// embedded as nested arrays; floats are written in shortest round-trip form,
// so a write/read cycle is exact.

#include <rom/scenegen.hpp>

#include <json.hpp>

#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace rom {

inline constexpr int kCorpusSchema = 1;

using nlohmann::json;

// Config ------------------------------------------------------------------

inline void to_json(json& j, const SceneConfig& c) {
  j = json{{"object_count", c.object_count},
           {"classes", c.classes},
           {"d_viz", c.d_viz},
           {"room_half_extent", c.room_half_extent},
           {"room_height", c.room_height},
           {"min_center_distance", c.min_center_distance},
           {"min_half_extent", c.min_half_extent},
           {"max_half_extent", c.max_half_extent},
           {"max_elevation", c.max_elevation},
           {"image_width", c.image_width},
           {"image_height", c.image_height},
           {"focal", c.focal},
           {"min_box_side_px", c.min_box_side_px},
           {"occlusion_overlap", c.occlusion_overlap},
           {"view_noise", c.view_noise},
           {"detection_noise", c.detection_noise},
           {"class_signal", c.class_signal},
           {"keypoint_density", c.keypoint_density},
           {"outlier_rate", c.outlier_rate},
           {"target", c.target ? json(to_string(*c.target)) : json(nullptr)},
           {"max_retries", c.max_retries},
           {"class_seed", c.class_seed}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const json& j, SceneConfig& c) {
  const SceneConfig d;
  const json defaults = d;
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw Error("scene config: unknown key '" + key + "'");
  }
  c.object_count = j.value("object_count", d.object_count);
  c.classes = j.value("classes", d.classes);
  c.d_viz = j.value("d_viz", d.d_viz);
  c.room_half_extent = j.value("room_half_extent", d.room_half_extent);
  c.room_height = j.value("room_height", d.room_height);
  c.min_center_distance = j.value("min_center_distance", d.min_center_distance);
  c.min_half_extent = j.value("min_half_extent", d.min_half_extent);
  c.max_half_extent = j.value("max_half_extent", d.max_half_extent);
  c.max_elevation = j.value("max_elevation", d.max_elevation);
  c.image_width = j.value("image_width", d.image_width);
  c.image_height = j.value("image_height", d.image_height);
  c.focal = j.value("focal", d.focal);
  c.min_box_side_px = j.value("min_box_side_px", d.min_box_side_px);
  c.occlusion_overlap = j.value("occlusion_overlap", d.occlusion_overlap);
  c.view_noise = j.value("view_noise", d.view_noise);
  c.detection_noise = j.value("detection_noise", d.detection_noise);
  c.class_signal = j.value("class_signal", d.class_signal);
  c.keypoint_density = j.value("keypoint_density", d.keypoint_density);
  c.outlier_rate = j.value("outlier_rate", d.outlier_rate);
  c.target.reset();
  if (j.contains("target") && !j.at("target").is_null()) c.target = difficulty_from_string(j.at("target").get<std::string>());
  c.max_retries = j.value("max_retries", d.max_retries);
  c.class_seed = j.value("class_seed", d.class_seed);
  c.validate();
}

// Pairs -------------------------------------------------------------------

namespace detail {

template <class T>
json matrix_json(const Tensor<T>& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <class T>
Tensor<T> matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw Error(std::string(what) + ": expected " + std::to_string(rows) + " rows");
  }
  Tensor<T> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw Error(std::string(what) + ": row " + std::to_string(r) + " does not have " + std::to_string(cols) + " entries");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<T>();
  }
  return m;
}

inline json camera_json(const Camera& c) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r) rot.push_back({c.rotation(r, 0), c.rotation(r, 1), c.rotation(r, 2)});
  return json{{"rotation", rot},
              {"translation", {c.translation.x(), c.translation.y(), c.translation.z()}},
              {"focal", c.focal},
              {"cx", c.cx},
              {"cy", c.cy},
              {"width", c.width},
              {"height", c.height}};
}

inline Camera camera_from_json(const json& j) {
  Camera c;
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) c.rotation(r, k) = j.at("rotation").at(r).at(k).get<double>();
    c.translation(r) = j.at("translation").at(r).get<double>();
  }
  c.focal = j.at("focal").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  return c;
}

inline json view_json(const View& v) {
  json dets = json::array();
  for (const Detection& d : v.detections) {
    dets.push_back(json{{"instance", d.instance},
                        {"label", d.label},
                        {"box", {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max}},
                        {"dx", d.dx},
                        {"dy", d.dy},
                        {"distance", d.distance}});
  }
  return json{{"camera", camera_json(v.camera)},
              {"detections", dets},
              {"d_viz", v.features.cols()},
              {"features", matrix_json(v.features)},
              {"rel_distance", matrix_json(v.rel_distance)}};
}

inline View view_from_json(const json& j) {
  View v;
  v.camera = camera_from_json(j.at("camera"));
  for (const json& d : j.at("detections")) {
    Detection det;
    det.instance = d.at("instance").get<int>();
    det.label = d.at("label").get<int>();
    const json& b = d.at("box");
    det.box = Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
    require_normalized(det.box);
    det.dx = d.at("dx").get<double>();
    det.dy = d.at("dy").get<double>();
    det.distance = d.at("distance").get<double>();
    v.detections.push_back(det);
  }
  const auto n = static_cast<Eigen::Index>(v.detections.size());
  v.features = matrix_from_json<float>(j.at("features"), n, j.at("d_viz").get<Eigen::Index>(), "features");
  v.rel_distance = matrix_from_json<double>(j.at("rel_distance"), n, n, "rel_distance");
  return v;
}

}  // namespace detail

inline json pair_json(const ScenePair& p) {
  json gt = json::array();
  for (auto [i, k] : p.gt) gt.push_back({i, k});
  json kps = json::array();
  for (const KeypointMatch& k : p.keypoints) kps.push_back({{k.u1, k.v1}, {k.u2, k.v2}});
  return json{{"schema", kCorpusSchema},
              {"id", p.id},
              {"difficulty", to_string(p.difficulty)},
              {"mean_distance_diff", p.mean_distance_diff},
              {"mean_angle_deg", p.mean_angle_deg},
              {"gt", gt},
              {"view1", detail::view_json(p.view1)},
              {"view2", detail::view_json(p.view2)},
              {"keypoints", kps}};
}

inline std::vector<KeypointMatch> keypoints_from_json(const json& j) {
  std::vector<KeypointMatch> out;
  for (const json& k : j) {
    out.push_back({k.at(0).at(0).get<double>(), k.at(0).at(1).get<double>(), k.at(1).at(0).get<double>(),
                   k.at(1).at(1).get<double>()});
  }
  return out;
}

inline ScenePair pair_from_json(const json& j) {
  if (!j.contains("schema") || j.at("schema") != kCorpusSchema) {
    throw Error("unsupported corpus schema " + (j.contains("schema") ? j.at("schema").dump() : std::string("(missing)")));
  }
  ScenePair p;
  p.id = j.at("id").get<std::uint64_t>();
  p.difficulty = difficulty_from_string(j.at("difficulty").get<std::string>());
  p.mean_distance_diff = j.at("mean_distance_diff").get<double>();
  p.mean_angle_deg = j.at("mean_angle_deg").get<double>();
  p.view1 = detail::view_from_json(j.at("view1"));
  p.view2 = detail::view_from_json(j.at("view2"));
  for (const json& m : j.at("gt")) {
    const int a = m.at(0).get<int>();
    const int b = m.at(1).get<int>();
    if (a < 0 || a >= p.view1.size() || b < 0 || b >= p.view2.size()) {
      throw Error("ground-truth match (" + std::to_string(a) + ", " + std::to_string(b) + ") out of range");
    }
    p.gt.emplace_back(a, b);
  }
  p.keypoints = keypoints_from_json(j.at("keypoints"));
  return p;
}

namespace detail {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return in;
}

/// Calls `f(json, line number)` for every non-empty line.
template <class F>
void for_each_line(const std::string& path, F f) {
  std::ifstream in = open_in(path);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(path + ":" + std::to_string(number) + ": " + e.what());
    }
    try {
      f(j, number);
    } catch (const json::exception& e) {
      throw Error(path + ":" + std::to_string(number) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(path + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

}  // namespace detail

inline void write_corpus(const std::string& path, std::span<const ScenePair> pairs) {
  std::ofstream out = detail::open_out(path);
  for (const ScenePair& p : pairs) out << pair_json(p).dump() << '\n';
  if (!out) throw Error("write to '" + path + "' failed");
}

inline std::vector<ScenePair> read_corpus(const std::string& path) {
  std::vector<ScenePair> pairs;
  detail::for_each_line(path, [&](const json& j, int) { pairs.push_back(pair_from_json(j)); });
  return pairs;
}

/// Keypoint file lines: {"id": <pair id>, "keypoints": [[[u1, v1], [u2, v2]], ...]}.
inline std::map<std::uint64_t, std::vector<KeypointMatch>> read_keypoints(const std::string& path) {
  std::map<std::uint64_t, std::vector<KeypointMatch>> out;
  detail::for_each_line(path, [&](const json& j, int) {
    out[j.at("id").get<std::uint64_t>()] = keypoints_from_json(j.at("keypoints"));
  });
  return out;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in = detail::open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path + ": " + e.what());
  }
}

}  // namespace rom
