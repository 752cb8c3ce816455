#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "flashmix/error.hpp"
#include "flashmix/geometry.hpp"
#include "flashmix/pointcloud.hpp"
#include "flashmix/rng.hpp"

namespace flashmix::synth {

enum class LandmarkKind : int { Box = 0, Pillar = 1, Wall = 2 };

/// Upright primitive standing on the ground plane z = 0.
///
/// Box and Wall use size_x/size_y as footprint extents along their local
/// axes (a wall is a thin box); Pillar uses size_x as its radius.
struct Landmark {
  LandmarkKind kind = LandmarkKind::Box;
  double cx = 0.0;
  double cy = 0.0;
  double yaw = 0.0;
  double size_x = 1.0;
  double size_y = 1.0;
  double height = 1.0;

  /// Radius of a vertical cylinder enclosing the primitive.
  double footprint_radius() const {
    return kind == LandmarkKind::Pillar ? size_x : 0.5 * std::hypot(size_x, size_y);
  }
};

struct Bounds {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();

  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
};

struct World {
  std::vector<Landmark> landmarks;
  Bounds bounds;
  std::uint64_t seed = 0;
};

inline World generate_world(std::uint64_t seed, double extent, int n_landmarks) {
  if (!(extent > 0.0) || n_landmarks < 1) {
    throw std::invalid_argument("generate_world needs extent > 0 and at least one landmark");
  }
  World world;
  world.seed = seed;
  world.bounds.lo = Vec3(-0.5 * extent, -0.5 * extent, 0.0);
  world.bounds.hi = Vec3(0.5 * extent, 0.5 * extent, 15.0);

  SplitMix64 rng(derive_seed(seed, 0x776f726c64ULL));
  // Shrink primitives for very small worlds so every landmark fits.
  const double scale = std::min(1.0, extent / 20.0);
  for (int i = 0; i < n_landmarks; ++i) {
    Landmark lm;
    const double u = rng.uniform();
    if (u < 0.4) {
      lm.kind = LandmarkKind::Box;
      lm.size_x = rng.uniform(1.5, 5.0) * scale;
      lm.size_y = rng.uniform(1.5, 5.0) * scale;
      lm.height = rng.uniform(2.0, 10.0);
    } else if (u < 0.75) {
      lm.kind = LandmarkKind::Pillar;
      lm.size_x = rng.uniform(0.2, 0.6) * scale;
      lm.size_y = lm.size_x;
      lm.height = rng.uniform(3.0, 12.0);
    } else {
      lm.kind = LandmarkKind::Wall;
      lm.size_x = rng.uniform(5.0, 15.0) * scale;
      lm.size_y = 0.3 * scale;
      lm.height = rng.uniform(2.0, 6.0);
    }
    lm.yaw = rng.uniform(0.0, std::numbers::pi);
    const double r = lm.footprint_radius();
    lm.cx = rng.uniform(world.bounds.lo.x() + r, world.bounds.hi.x() - r);
    lm.cy = rng.uniform(world.bounds.lo.y() + r, world.bounds.hi.y() - r);
    world.landmarks.push_back(lm);
  }
  return world;
}

// ---------------------------------------------------------------------------
// Trajectories

struct Trajectory {
  std::vector<Pose> poses;
  double spacing = 1.0;
};

struct TrajectoryCfg {
  double sensor_height = 1.8;
  double max_turn = 0.25;     // radians of random heading change per step
  double max_steer = 0.6;     // radians per step when steering back from the border
  double step_jitter = 0.1;   // relative step-length jitter
};

namespace detail {

inline double wrap_angle(double a) {
  return std::remainder(a, 2.0 * std::numbers::pi);
}

}  // namespace detail

/// Smooth random walk inside the world bounds with headings tangent to motion.
inline Trajectory generate_trajectory(const World& world, int n_poses, double spacing, std::uint64_t seed,
                                      const TrajectoryCfg& cfg = {}) {
  if (n_poses < 1 || !(spacing > 0.0)) {
    throw std::invalid_argument("generate_trajectory needs n_poses >= 1 and spacing > 0");
  }
  SplitMix64 rng(seed);
  const Vec3& lo = world.bounds.lo;
  const Vec3& hi = world.bounds.hi;
  const double extent = std::min(hi.x() - lo.x(), hi.y() - lo.y());
  const double margin = std::min(0.25 * extent, std::max(2.0 * spacing, 0.1 * extent));

  double x = rng.uniform(lo.x() + margin, hi.x() - margin);
  double y = rng.uniform(lo.y() + margin, hi.y() - margin);
  double heading = rng.uniform(-std::numbers::pi, std::numbers::pi);
  const double cx = 0.5 * (lo.x() + hi.x());
  const double cy = 0.5 * (lo.y() + hi.y());

  Trajectory traj;
  traj.spacing = spacing;
  traj.poses.reserve(static_cast<std::size_t>(n_poses));
  for (int i = 0; i < n_poses; ++i) {
    const double step = spacing * (1.0 + rng.uniform(-cfg.step_jitter, cfg.step_jitter));
    if (i > 0) {
      heading = detail::wrap_angle(heading + rng.uniform(-cfg.max_turn, cfg.max_turn));
    }
    const auto inner = [&](double px, double py) {
      return px >= lo.x() + margin && px <= hi.x() - margin && py >= lo.y() + margin && py <= hi.y() - margin;
    };
    if (!inner(x + step * std::cos(heading), y + step * std::sin(heading))) {
      const double to_center = std::atan2(cy - y, cx - x);
      const double diff = detail::wrap_angle(to_center - heading);
      heading = detail::wrap_angle(heading + std::clamp(diff, -cfg.max_steer, cfg.max_steer));
      const double nx = x + step * std::cos(heading);
      const double ny = y + step * std::sin(heading);
      if (!(nx >= lo.x() && nx <= hi.x() && ny >= lo.y() && ny <= hi.y())) {
        heading = to_center;
      }
    }
    traj.poses.push_back({Vec3(x, y, cfg.sensor_height), Quaternion::from_yaw(heading)});
    x += step * std::cos(heading);
    y += step * std::sin(heading);
  }
  return traj;
}

/// Test trajectory that re-traverses a contiguous stretch of `train`: poses
/// sit halfway between consecutive training poses with a smooth lateral
/// offset and small heading noise.
inline Trajectory generate_retraversal(const World& world, const Trajectory& train, int n_poses,
                                       std::uint64_t seed, double lateral_sigma = 0.3,
                                       double yaw_sigma_deg = 2.0) {
  if (n_poses < 1 || train.poses.empty()) {
    throw std::invalid_argument("generate_retraversal needs a nonempty training trajectory");
  }
  SplitMix64 rng(seed);
  const auto n_train = static_cast<int>(train.poses.size());
  const int start = n_train > n_poses + 1 ? static_cast<int>(rng.index(n_train - n_poses - 1)) : 0;
  Trajectory out;
  out.spacing = train.spacing;
  double offset = 0.0;
  for (int k = 0; k < n_poses; ++k) {
    const int i = std::min(start + k, n_train - 1);
    const int j = std::min(i + 1, n_train - 1);
    const Pose& a = train.poses[i];
    const Pose& b = train.poses[j];
    const double heading = a.q.yaw();
    offset = 0.8 * offset + 0.6 * lateral_sigma * rng.normal();
    Vec3 t = 0.5 * (a.t + b.t) + offset * Vec3(-std::sin(heading), std::cos(heading), 0.0);
    t = t.cwiseMax(world.bounds.lo).cwiseMin(world.bounds.hi);
    const double yaw = heading + yaw_sigma_deg * std::numbers::pi / 180.0 * rng.normal();
    out.poses.push_back({t, Quaternion::from_yaw(yaw)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scan simulation

struct SensorCfg {
  double max_range = 60.0;
  double noise = 0.02;          // isotropic Gaussian sigma, meters
  double density = 8.0;         // surface samples per m^2 up to ref_range
  double ref_range = 8.0;       // beyond this, density falls off as (ref_range / r)^2
  bool ground = true;           // also sample the ground plane z = 0
  double ground_density = 2.0;  // candidate samples per m^2 on the ground
  double ground_radius = 30.0;
};

namespace detail {

struct Rect {
  Vec3 origin;
  Vec3 e1;
  Vec3 e2;
};

inline std::vector<Rect> box_faces(const Landmark& lm) {
  const Vec3 ax(std::cos(lm.yaw), std::sin(lm.yaw), 0.0);
  const Vec3 ay(-std::sin(lm.yaw), std::cos(lm.yaw), 0.0);
  const Vec3 up(0.0, 0.0, lm.height);
  const Vec3 c(lm.cx, lm.cy, 0.0);
  const Vec3 hx = 0.5 * lm.size_x * ax;
  const Vec3 hy = 0.5 * lm.size_y * ay;
  const Vec3 c00 = c - hx - hy;
  const Vec3 c10 = c + hx - hy;
  const Vec3 c11 = c + hx + hy;
  const Vec3 c01 = c - hx + hy;
  return {
      {c00, c10 - c00, up}, {c10, c11 - c10, up}, {c11, c01 - c11, up}, {c01, c00 - c01, up},
      {c00 + up, c10 - c00, c01 - c00},  // roof
  };
}

}  // namespace detail

/// Samples landmark (and optionally ground) surfaces around `pose` and returns
/// the points in the sensor frame. `scan_key` selects the random stream, so a
/// scan is a pure function of (world.seed, scan_key, pose, cfg).
inline PointCloud simulate_scan(const World& world, const Pose& pose, const SensorCfg& cfg, std::uint64_t scan_key) {
  const Vec3 origin = pose.t;
  const double max_r2 = cfg.max_range * cfg.max_range;

  bool any_in_range = false;
  for (const auto& lm : world.landmarks) {
    const double d = std::hypot(lm.cx - origin.x(), lm.cy - origin.y()) - lm.footprint_radius();
    if (d <= cfg.max_range) {
      any_in_range = true;
      break;
    }
  }
  if (!any_in_range) {
    throw EmptyScan("no landmark surface within " + std::to_string(cfg.max_range) + " m of the sensor");
  }

  SplitMix64 rng(derive_seed(world.seed, 0x7363616eULL, scan_key));
  const Pose to_sensor = pose.inverse();
  std::vector<Vec3> pts;

  const auto emit = [&](const Vec3& w) {
    const double r2 = (w - origin).squaredNorm();
    if (r2 > max_r2) return;
    const double keep = std::min(1.0, cfg.ref_range * cfg.ref_range / std::max(r2, 1e-12));
    if (rng.uniform() >= keep) return;
    Vec3 p = to_sensor.apply(w);
    if (cfg.noise > 0.0) {
      p += cfg.noise * Vec3(rng.normal(), rng.normal(), rng.normal());
    }
    pts.push_back(p);
  };
  const auto count_for = [&](double area, double density) {
    const double expected = area * density;
    auto n = static_cast<std::size_t>(expected);
    if (rng.uniform() < expected - static_cast<double>(n)) ++n;
    return n;
  };

  for (const auto& lm : world.landmarks) {
    const double d = std::hypot(lm.cx - origin.x(), lm.cy - origin.y()) - lm.footprint_radius();
    if (d > cfg.max_range) continue;
    if (lm.kind == LandmarkKind::Pillar) {
      const double r = lm.size_x;
      const std::size_t n_side = count_for(2.0 * std::numbers::pi * r * lm.height, cfg.density);
      for (std::size_t s = 0; s < n_side; ++s) {
        const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double z = rng.uniform(0.0, lm.height);
        emit(Vec3(lm.cx + r * std::cos(phi), lm.cy + r * std::sin(phi), z));
      }
      const std::size_t n_top = count_for(std::numbers::pi * r * r, cfg.density);
      for (std::size_t s = 0; s < n_top; ++s) {
        const double rr = r * std::sqrt(rng.uniform());
        const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
        emit(Vec3(lm.cx + rr * std::cos(phi), lm.cy + rr * std::sin(phi), lm.height));
      }
    } else {
      for (const auto& f : detail::box_faces(lm)) {
        const std::size_t n = count_for(f.e1.norm() * f.e2.norm(), cfg.density);
        for (std::size_t s = 0; s < n; ++s) {
          const double a = rng.uniform();
          const double b = rng.uniform();
          emit(f.origin + a * f.e1 + b * f.e2);
        }
      }
    }
  }

  if (cfg.ground) {
    const double r_max = std::min(cfg.ground_radius, cfg.max_range);
    const std::size_t n = count_for(std::numbers::pi * r_max * r_max, cfg.ground_density);
    for (std::size_t s = 0; s < n; ++s) {
      const double rr = r_max * std::sqrt(rng.uniform());
      const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
      emit(Vec3(origin.x() + rr * std::cos(phi), origin.y() + rr * std::sin(phi), 0.0));
    }
  }
  return PointCloud(std::move(pts));
}

/// Distance from a world point to the nearest landmark or ground surface.
inline double surface_distance(const World& world, const Vec3& p, bool include_ground = true) {
  double best = include_ground ? std::abs(p.z()) : std::numeric_limits<double>::infinity();
  for (const auto& lm : world.landmarks) {
    const Vec3 local = p - Vec3(lm.cx, lm.cy, 0.0);
    if (lm.kind == LandmarkKind::Pillar) {
      // Capped cylinder signed distance.
      const double dr = std::hypot(local.x(), local.y()) - lm.size_x;
      const double dz = std::abs(local.z() - 0.5 * lm.height) - 0.5 * lm.height;
      const double d = std::abs(std::min(std::max(dr, dz), 0.0) + std::hypot(std::max(dr, 0.0), std::max(dz, 0.0)));
      best = std::min(best, d);
      continue;
    }
    // Oriented box: distance to its boundary surface (floor excluded).
    const double c = std::cos(lm.yaw);
    const double s = std::sin(lm.yaw);
    const Vec3 q(std::abs(c * local.x() + s * local.y()), std::abs(-s * local.x() + c * local.y()),
                 local.z() - 0.5 * lm.height);
    const Vec3 half(0.5 * lm.size_x, 0.5 * lm.size_y, 0.5 * lm.height);
    const Vec3 delta(q.x() - half.x(), q.y() - half.y(), std::abs(q.z()) - half.z());
    const double outside = delta.cwiseMax(0.0).norm();
    const double inside = std::min(delta.maxCoeff(), 0.0);
    best = std::min(best, std::abs(outside + inside));
  }
  return best;
}

}  // namespace flashmix::synth
