#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "flashmix/error.hpp"

namespace flashmix {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Unit quaternion kept on the w >= 0 hemisphere.
///
/// Every constructor normalizes and flips the sign when w < 0, so two
/// quaternions describing the same rotation compare equal component-wise and
/// the log map below is single valued.
class Quaternion {
 public:
  Quaternion() = default;

  Quaternion(double w, double x, double y, double z) : w_(w), x_(x), y_(y), z_(z) { canonicalize(); }

  static Quaternion identity() { return {}; }

  static Quaternion from_axis_angle(const Vec3& axis, double angle) {
    const double n = axis.norm();
    if (n == 0.0) {
      return {};
    }
    const double s = std::sin(0.5 * angle) / n;
    return {std::cos(0.5 * angle), axis.x() * s, axis.y() * s, axis.z() * s};
  }

  static Quaternion from_yaw(double yaw) { return from_axis_angle(Vec3::UnitZ(), yaw); }

  double w() const { return w_; }
  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }
  Vec3 vec() const { return {x_, y_, z_}; }

  double dot(const Quaternion& o) const { return w_ * o.w_ + x_ * o.x_ + y_ * o.y_ + z_ * o.z_; }

  Quaternion conjugate() const {
    Quaternion q;
    q.w_ = w_;
    q.x_ = -x_;
    q.y_ = -y_;
    q.z_ = -z_;
    return q;
  }

  /// Hamilton product (this applied after rhs).
  Quaternion operator*(const Quaternion& r) const {
    return {w_ * r.w_ - x_ * r.x_ - y_ * r.y_ - z_ * r.z_, w_ * r.x_ + x_ * r.w_ + y_ * r.z_ - z_ * r.y_,
            w_ * r.y_ - x_ * r.z_ + y_ * r.w_ + z_ * r.x_, w_ * r.z_ + x_ * r.y_ - y_ * r.x_ + z_ * r.w_};
  }

  Mat3 matrix() const { return Eigen::Quaterniond(w_, x_, y_, z_).toRotationMatrix(); }

  Vec3 rotate(const Vec3& v) const {
    // v' = v + 2w (u x v) + 2 u x (u x v)
    const Vec3 u = vec();
    const Vec3 c = u.cross(v);
    return v + 2.0 * w_ * c + 2.0 * u.cross(c);
  }

  double yaw() const { return std::atan2(2.0 * (w_ * z_ + x_ * y_), 1.0 - 2.0 * (y_ * y_ + z_ * z_)); }

  friend bool operator==(const Quaternion&, const Quaternion&) = default;

 private:
  void canonicalize() {
    const double n = std::sqrt(w_ * w_ + x_ * x_ + y_ * y_ + z_ * z_);
    if (!(n > 0.0) || !std::isfinite(n)) {
      w_ = 1.0;
      x_ = y_ = z_ = 0.0;
      return;
    }
    // Unit input is kept bit-exact.
    const double sign = w_ < 0.0 ? -1.0 : 1.0;
    const double s = std::abs(n - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon() ? sign : sign / n;
    w_ *= s;
    x_ *= s;
    y_ *= s;
    z_ *= s;
  }

  double w_ = 1.0;
  double x_ = 0.0;
  double y_ = 0.0;
  double z_ = 0.0;
};

/// Log-quaternion u * theta for q = (cos theta, u sin theta).
struct LogQuat {
  Vec3 v = Vec3::Zero();
};

inline constexpr double kLogSmallAngle = 1e-6;

inline LogQuat quat_log(const Quaternion& q) {
  const Vec3 u = q.vec();
  const double s = u.norm();
  const double theta = std::atan2(s, q.w());
  if (theta < kLogSmallAngle) {
    // theta / sin(theta) = 1 + theta^2 / 6 + O(theta^4)
    return {u * (1.0 + theta * theta / 6.0)};
  }
  return {u * (theta / s)};
}

/// Inverse of quat_log: (cos |v|, v/|v| sin |v|), canonicalized to w >= 0.
inline Quaternion quat_exp(const LogQuat& lq) {
  const double theta = lq.v.norm();
  if (theta < kLogSmallAngle) {
    // sin(theta) / theta = 1 - theta^2 / 6 + O(theta^4)
    const Vec3 u = lq.v * (1.0 - theta * theta / 6.0);
    return {std::cos(theta), u.x(), u.y(), u.z()};
  }
  const Vec3 u = lq.v * (std::sin(theta) / theta);
  return {std::cos(theta), u.x(), u.y(), u.z()};
}

/// Geodesic angle between two rotations, in degrees, in [0, 180].
inline double orientation_error_deg(const Quaternion& a, const Quaternion& b) {
  const Quaternion d = a.conjugate() * b;
  return 2.0 * std::atan2(d.vec().norm(), std::abs(d.w())) * 180.0 / std::numbers::pi;
}

/// Rigid transform mapping sensor-frame coordinates into the world frame.
struct Pose {
  Vec3 t = Vec3::Zero();
  Quaternion q;

  static Pose identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return q.rotate(p) + t; }

  Pose inverse() const {
    const Quaternion qi = q.conjugate();
    return {-qi.rotate(t), qi};
  }

  /// (this * rhs)(p) = this(rhs(p))
  Pose operator*(const Pose& rhs) const { return {q.rotate(rhs.t) + t, q * rhs.q}; }
};

inline double translation_error(const Pose& a, const Pose& b) { return (a.t - b.t).norm(); }

inline std::vector<Vec3> transform_points(const Pose& pose, const std::vector<Vec3>& pts) {
  std::vector<Vec3> out;
  out.reserve(pts.size());
  const Mat3 r = pose.q.matrix();
  for (const auto& p : pts) {
    out.emplace_back(r * p + pose.t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pose text format: one pose per line, "tx ty tz qw qx qy qz".

inline std::string format_pose(const Pose& p) {
  std::ostringstream os;
  os << std::setprecision(17) << p.t.x() << ' ' << p.t.y() << ' ' << p.t.z() << ' ' << p.q.w() << ' ' << p.q.x()
     << ' ' << p.q.y() << ' ' << p.q.z();
  return os.str();
}

inline Pose parse_pose(const std::string& line) {
  std::istringstream is(line);
  double v[7];
  for (double& x : v) {
    if (!(is >> x)) {
      throw FormatError("malformed pose line: '" + line + "'");
    }
  }
  std::string rest;
  if (is >> rest) {
    throw FormatError("trailing data on pose line: '" + line + "'");
  }
  return {Vec3(v[0], v[1], v[2]), Quaternion(v[3], v[4], v[5], v[6])};
}

inline void write_poses(const std::filesystem::path& path, const std::vector<Pose>& poses) {
  std::ofstream os(path);
  if (!os) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  for (const auto& p : poses) {
    os << format_pose(p) << '\n';
  }
  if (!os) {
    throw IoError("write failed: " + path.string());
  }
}

inline std::vector<Pose> read_poses(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) {
    throw IoError("cannot open " + path.string());
  }
  std::vector<Pose> poses;
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') {
      continue;
    }
    poses.push_back(parse_pose(line));
  }
  return poses;
}

}  // namespace flashmix
