#pragma once

#include <cmath>

namespace vcdi {

inline constexpr double kHz = 10.0;
inline constexpr double kDt = 0.1;  // engine-wide step, 10 Hz

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double cross(const Vec2& o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
  double squared_norm() const { return x * x + y * y; }
};

inline double distance(const Vec2& a, const Vec2& b) { return (a - b).norm(); }

// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * M_PI);
  if (w <= -M_PI) w += 2.0 * M_PI;
  return w;
}

// Rigid 2-D motion: rotation by `heading` followed by translation by `pos`.
// apply() maps a point expressed in this pose's frame into the parent frame.
struct Pose2 {
  Vec2 pos;
  double heading = 0.0;

  Vec2 apply(const Vec2& p) const {
    const double c = std::cos(heading), s = std::sin(heading);
    return {pos.x + c * p.x - s * p.y, pos.y + s * p.x + c * p.y};
  }

  // Rotation only; for velocities and other direction vectors.
  Vec2 apply_vector(const Vec2& v) const {
    const double c = std::cos(heading), s = std::sin(heading);
    return {c * v.x - s * v.y, s * v.x + c * v.y};
  }

  double apply_angle(double a) const { return wrap_angle(a + heading); }

  Pose2 inverse() const {
    const double c = std::cos(heading), s = std::sin(heading);
    return {{-(c * pos.x + s * pos.y), -(-s * pos.x + c * pos.y)},
            wrap_angle(-heading)};
  }

  // this ∘ other: first apply other, then this.
  Pose2 compose(const Pose2& other) const {
    return {apply(other.pos), wrap_angle(heading + other.heading)};
  }

  bool is_identity(double tol = 0.0) const {
    return std::abs(pos.x) <= tol && std::abs(pos.y) <= tol &&
           std::abs(heading) <= tol;
  }
};

}  // namespace vcdi
