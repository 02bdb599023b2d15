#pragma once

#include <rom/diffcore.hpp>

#include <algorithm>
#include <array>

namespace rom {

/// Axis-aligned box, (x_min, y_min, x_max, y_max). Normalized boxes live in
/// [0,1] image coordinates.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  [[nodiscard]] double width() const { return x_max - x_min; }
  [[nodiscard]] double height() const { return y_max - y_min; }
  [[nodiscard]] double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  [[nodiscard]] double center_x() const { return 0.5 * (x_min + x_max); }
  [[nodiscard]] double center_y() const { return 0.5 * (y_min + y_max); }

  /// Boundary-inclusive containment.
  [[nodiscard]] bool contains(double u, double v) const {
    return u >= x_min && u <= x_max && v >= y_min && v <= y_max;
  }

  [[nodiscard]] bool is_normalized() const {
    return x_min < x_max && y_min < y_max && x_min >= 0.0 && y_min >= 0.0 && x_max <= 1.0 &&
           y_max <= 1.0;
  }

  [[nodiscard]] std::array<double, 4> as_array() const { return {x_min, y_min, x_max, y_max}; }

  friend bool operator==(const Box&, const Box&) = default;
};

inline double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

inline double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline void require_normalized(const Box& b) {
  if (!b.is_normalized()) {
    throw Error("bounding box out of range: (" + std::to_string(b.x_min) + ", " +
                std::to_string(b.y_min) + ", " + std::to_string(b.x_max) + ", " +
                std::to_string(b.y_max) + ")");
  }
}

}  // namespace rom
