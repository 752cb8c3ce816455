#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

#include "flashmix/error.hpp"
#include "flashmix/geometry.hpp"
#include "flashmix/pointcloud.hpp"
#include "flashmix/rng.hpp"

namespace flashmix {

using DescriptorMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kRawFeatureCount = 8;
inline constexpr std::uint32_t kEncoderVersion = 1;

/// Frozen handcrafted point encoder settings. Everything that changes the
/// descriptors goes into hash().
struct EncoderConfig {
  int d = 32;
  double neighborhood_radius = 2.0;
  std::uint64_t projection_seed = 0x5eedULL;

  // Preprocessing applied before encoding.
  bool remove_ground = true;
  GroundCfg ground{};
  double voxel = 0.5;

  void validate() const {
    if (d < kRawFeatureCount) {
      throw std::invalid_argument("encoder dimension d must be >= 8");
    }
    if (!(neighborhood_radius > 0.0) || !(voxel > 0.0)) {
      throw std::invalid_argument("encoder radius and voxel size must be positive");
    }
  }

  std::uint64_t hash() const {
    // FNV-1a over the canonical field encoding.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto mix = [&h](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xffU;
        h *= 0x100000001b3ULL;
      }
    };
    mix(kEncoderVersion);
    mix(static_cast<std::uint64_t>(d));
    mix(std::bit_cast<std::uint64_t>(neighborhood_radius));
    mix(projection_seed);
    mix(remove_ground ? 1U : 0U);
    mix(static_cast<std::uint64_t>(ground.iterations));
    mix(std::bit_cast<std::uint64_t>(ground.inlier_dist));
    mix(std::bit_cast<std::uint64_t>(ground.max_tilt_deg));
    mix(ground.seed);
    mix(std::bit_cast<std::uint64_t>(voxel));
    return h;
  }
};

/// M x d descriptors for one scan plus its ground-truth pose.
struct DescriptorSet {
  DescriptorMatrix F;
  Pose pose;
  std::uint32_t scan_id = 0;
};

/// Per-point handcrafted features, in this order:
///   0-2  neighborhood centroid minus the point (sensor frame, m)
///   3    linearity   (l1 - l2) / l1
///   4    planarity   (l2 - l3) / l1
///   5    sphericity  l3 / l1
///   6    height above the cloud's lowest point (m)
///   7    neighbor count within the radius, excluding the point itself
/// with l1 >= l2 >= l3 the eigenvalues of the neighborhood covariance.
using RawFeatures = std::array<double, kRawFeatureCount>;

inline RawFeatures raw_features(const PointCloud& cloud, std::size_t index, double radius, double min_z) {
  const Vec3& p = cloud[index];
  const double r2 = radius * radius;
  Vec3 sum = Vec3::Zero();
  std::size_t count = 0;
  for (const auto& q : cloud) {
    if ((q - p).squaredNorm() <= r2) {
      sum += q;
      ++count;
    }
  }
  RawFeatures f{};
  const Vec3 centroid = sum / static_cast<double>(count);
  const Vec3 offset = centroid - p;
  f[0] = offset.x();
  f[1] = offset.y();
  f[2] = offset.z();
  if (count >= 3) {
    Mat3 cov = Mat3::Zero();
    for (const auto& q : cloud) {
      if ((q - p).squaredNorm() <= r2) {
        const Vec3 c = q - centroid;
        cov.noalias() += c * c.transpose();
      }
    }
    cov /= static_cast<double>(count);
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov, Eigen::EigenvaluesOnly);
    const double l1 = std::max(eig.eigenvalues()[2], 0.0);
    const double l2 = std::max(eig.eigenvalues()[1], 0.0);
    const double l3 = std::max(eig.eigenvalues()[0], 0.0);
    if (l1 > 1e-12) {
      f[3] = (l1 - l2) / l1;
      f[4] = (l2 - l3) / l1;
      f[5] = l3 / l1;
    }
  }
  f[6] = p.z() - min_z;
  f[7] = static_cast<double>(count - 1);
  return f;
}

inline RawFeatures raw_features(const PointCloud& cloud, std::size_t index, double radius) {
  double min_z = std::numeric_limits<double>::infinity();
  for (const auto& q : cloud) min_z = std::min(min_z, q.z());
  return raw_features(cloud, index, radius, min_z);
}

/// Fixed d x 8 projection: orthonormalized Gaussian columns scaled by
/// sqrt(d / 8), followed by per-feature input scaling that brings the raw
/// features to unit order.
class FeatureProjection {
 public:
  explicit FeatureProjection(const EncoderConfig& cfg) : weights_(cfg.d, kRawFeatureCount) {
    cfg.validate();
    SplitMix64 rng(cfg.projection_seed);
    Eigen::MatrixXd g(cfg.d, kRawFeatureCount);
    for (int r = 0; r < cfg.d; ++r) {
      for (int c = 0; c < kRawFeatureCount; ++c) g(r, c) = rng.normal();
    }
    // Modified Gram-Schmidt on columns.
    for (int c = 0; c < kRawFeatureCount; ++c) {
      for (int k = 0; k < c; ++k) g.col(c) -= g.col(k).dot(g.col(c)) * g.col(k);
      g.col(c).normalize();
    }
    weights_ = g * std::sqrt(static_cast<double>(cfg.d) / kRawFeatureCount);
    const double inv_r = 1.0 / cfg.neighborhood_radius;
    scale_ << inv_r, inv_r, inv_r, 1.0, 1.0, 1.0, 1.0 / 5.0, 1.0 / 25.0;
  }

  void apply(const RawFeatures& raw, Eigen::Ref<Eigen::RowVectorXf> out) const {
    Eigen::Matrix<double, kRawFeatureCount, 1> x;
    for (int i = 0; i < kRawFeatureCount; ++i) x[i] = raw[i] * scale_[i];
    const Eigen::VectorXd y = weights_ * x;
    out = y.array().tanh().cast<float>().transpose();
  }

  const Eigen::MatrixXd& weights() const { return weights_; }

 private:
  Eigen::MatrixXd weights_;
  Eigen::Matrix<double, kRawFeatureCount, 1> scale_;
};

/// Ground removal followed by voxel downsampling.
inline PointCloud preprocess(const PointCloud& cloud, const EncoderConfig& cfg) {
  if (cloud.empty()) {
    throw EmptyScan("empty scan");
  }
  PointCloud out = cfg.remove_ground ? remove_ground(cloud, cfg.ground).cloud : cloud;
  return voxel_downsample(out, cfg.voxel);
}

/// Encodes a preprocessed cloud into M descriptors, one per FPS-selected point.
inline DescriptorSet encode(const PointCloud& cloud, const EncoderConfig& cfg, std::size_t m, std::uint64_t fps_seed) {
  cfg.validate();
  if (cloud.empty()) {
    throw EmptyScan("cannot encode an empty point cloud");
  }
  const SampleIndices idx = farthest_point_sample(cloud, m, fps_seed);
  const FeatureProjection proj(cfg);
  double min_z = std::numeric_limits<double>::infinity();
  for (const auto& q : cloud) min_z = std::min(min_z, q.z());

  DescriptorSet out;
  out.F.resize(static_cast<Eigen::Index>(m), cfg.d);
  for (std::size_t i = 0; i < m; ++i) {
    proj.apply(raw_features(cloud, idx[i], cfg.neighborhood_radius, min_z), out.F.row(static_cast<Eigen::Index>(i)));
  }
  return out;
}

}  // namespace flashmix
