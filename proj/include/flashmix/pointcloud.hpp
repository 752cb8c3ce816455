#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "flashmix/error.hpp"
#include "flashmix/geometry.hpp"
#include "flashmix/rng.hpp"

namespace flashmix {

/// N x 3 point set in the sensor frame, meters. Coordinates are always finite.
class PointCloud {
 public:
  PointCloud() = default;

  explicit PointCloud(std::vector<Vec3> points) : points_(std::move(points)) {
    for (const auto& p : points_) {
      if (!p.allFinite()) {
        throw FormatError("point cloud contains a non-finite coordinate");
      }
    }
  }

  std::size_t size() const noexcept { return points_.size(); }
  bool empty() const noexcept { return points_.empty(); }
  const Vec3& operator[](std::size_t i) const { return points_[i]; }
  const std::vector<Vec3>& points() const noexcept { return points_; }

  auto begin() const noexcept { return points_.begin(); }
  auto end() const noexcept { return points_.end(); }

 private:
  std::vector<Vec3> points_;
};

inline PointCloud transform_points(const Pose& pose, const PointCloud& cloud) {
  return PointCloud(transform_points(pose, cloud.points()));
}

/// Indices selected by farthest point sampling; always exactly M long.
using SampleIndices = std::vector<std::uint32_t>;

// ---------------------------------------------------------------------------
// Ground removal

struct GroundCfg {
  int iterations = 100;
  double inlier_dist = 0.2;
  double max_tilt_deg = 30.0;  // candidate plane normals must be this close to +z
  std::uint64_t seed = 0x67726f756e64ULL;
};

enum class GroundStatus {
  Removed,          // a plane was found and its inliers dropped
  DegenerateCloud,  // fewer than 3 points or no non-collinear triple; input returned
  NoPlane,          // no candidate satisfied the tilt constraint; input returned
  AllInliers,       // every point was a plane inlier; input returned
};

struct GroundResult {
  PointCloud cloud;
  GroundStatus status = GroundStatus::Removed;
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;  // plane: normal . p = offset
  std::size_t removed = 0;

  bool warning() const { return status != GroundStatus::Removed; }
};

/// RANSAC ground-plane removal restricted to near-horizontal planes.
inline GroundResult remove_ground(const PointCloud& cloud, const GroundCfg& cfg = {}) {
  GroundResult result{cloud, GroundStatus::DegenerateCloud};
  const std::size_t n = cloud.size();
  if (n < 3) {
    return result;
  }

  const double cos_tilt = std::cos(cfg.max_tilt_deg * std::numbers::pi / 180.0);
  SplitMix64 rng(cfg.seed);
  std::size_t best_inliers = 0;
  bool any_valid = false;
  bool any_tilted = false;

  for (int it = 0; it < cfg.iterations; ++it) {
    const auto i = rng.index(n);
    auto j = rng.index(n - 1);
    if (j >= i) ++j;
    auto k = rng.index(n - 2);
    for (auto lo = std::min(i, j), hi = std::max(i, j); auto x : {lo, hi}) {
      if (k >= x) ++k;
    }
    const Vec3& a = cloud[i];
    Vec3 normal = (cloud[j] - a).cross(cloud[k] - a);
    const double len = normal.norm();
    if (len < 1e-9) {
      continue;
    }
    normal /= len;
    if (normal.z() < 0.0) normal = -normal;
    any_valid = true;
    if (normal.z() < cos_tilt) {
      any_tilted = true;
      continue;
    }
    const double offset = normal.dot(a);
    std::size_t count = 0;
    for (const auto& p : cloud) {
      if (std::abs(normal.dot(p) - offset) <= cfg.inlier_dist) ++count;
    }
    if (count > best_inliers) {
      best_inliers = count;
      result.normal = normal;
      result.offset = offset;
    }
  }

  if (best_inliers == 0) {
    result.status = (any_valid && any_tilted) ? GroundStatus::NoPlane : GroundStatus::DegenerateCloud;
    return result;
  }
  if (best_inliers == n) {
    result.status = GroundStatus::AllInliers;
    return result;
  }

  std::vector<Vec3> kept;
  kept.reserve(n - best_inliers);
  for (const auto& p : cloud) {
    if (std::abs(result.normal.dot(p) - result.offset) > cfg.inlier_dist) kept.push_back(p);
  }
  result.removed = n - kept.size();
  result.cloud = PointCloud(std::move(kept));
  result.status = GroundStatus::Removed;
  return result;
}

// ---------------------------------------------------------------------------
// Voxel downsampling

/// One centroid per occupied voxel, ordered lexicographically by voxel index.
inline PointCloud voxel_downsample(const PointCloud& cloud, double voxel) {
  if (!(voxel > 0.0)) {
    throw std::invalid_argument("voxel size must be positive");
  }
  using Key = std::array<std::int64_t, 3>;
  std::vector<std::pair<Key, std::uint32_t>> keyed;
  keyed.reserve(cloud.size());
  for (std::uint32_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud[i];
    keyed.push_back({Key{static_cast<std::int64_t>(std::floor(p.x() / voxel)),
                         static_cast<std::int64_t>(std::floor(p.y() / voxel)),
                         static_cast<std::int64_t>(std::floor(p.z() / voxel))},
                     i});
  }
  std::sort(keyed.begin(), keyed.end());

  std::vector<Vec3> out;
  for (std::size_t a = 0; a < keyed.size();) {
    std::size_t b = a;
    Vec3 sum = Vec3::Zero();
    while (b < keyed.size() && keyed[b].first == keyed[a].first) {
      sum += cloud[keyed[b].second];
      ++b;
    }
    out.push_back(sum / static_cast<double>(b - a));
    a = b;
  }
  return PointCloud(std::move(out));
}

// ---------------------------------------------------------------------------
// Farthest point sampling

/// FPS from a fixed first index. Each pick maximizes the squared distance to
/// the selected set, ties going to the lowest index. When the cloud has fewer
/// than M points the result is padded with uniform draws (seeded by
/// pad_seed) from the already-selected indices.
inline SampleIndices farthest_point_sample_from(const PointCloud& cloud, std::size_t m, std::uint32_t first,
                                                std::uint64_t pad_seed) {
  const std::size_t n = cloud.size();
  if (n == 0 || m == 0) {
    throw std::invalid_argument("farthest_point_sample needs a nonempty cloud and M >= 1");
  }
  if (first >= n) {
    throw std::out_of_range("first FPS index out of range");
  }
  SampleIndices picked;
  picked.reserve(m);
  picked.push_back(first);

  std::vector<double> min_d(n);
  std::vector<char> taken(n, 0);
  taken[first] = 1;
  const Vec3 p0 = cloud[first];
  for (std::size_t i = 0; i < n; ++i) {
    min_d[i] = (cloud[i] - p0).squaredNorm();
  }
  const std::size_t distinct = std::min(m, n);
  while (picked.size() < distinct) {
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i] && min_d[i] > best_d) {
        best_d = min_d[i];
        best = i;
      }
    }
    taken[best] = 1;
    picked.push_back(static_cast<std::uint32_t>(best));
    const Vec3 pb = cloud[best];
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (cloud[i] - pb).squaredNorm();
      if (d < min_d[i]) min_d[i] = d;
    }
  }

  if (picked.size() < m) {
    SplitMix64 rng(pad_seed);
    const std::size_t base = picked.size();
    while (picked.size() < m) {
      picked.push_back(picked[rng.index(base)]);
    }
  }
  return picked;
}

/// FPS with the first index drawn from `seed`.
inline SampleIndices farthest_point_sample(const PointCloud& cloud, std::size_t m, std::uint64_t seed) {
  if (cloud.empty()) {
    throw std::invalid_argument("farthest_point_sample needs a nonempty cloud");
  }
  SplitMix64 rng(seed);
  const auto first = static_cast<std::uint32_t>(rng.index(cloud.size()));
  return farthest_point_sample_from(cloud, m, first, rng.next());
}

// ---------------------------------------------------------------------------
// Scan files. Binary: "FMPC", u32 version = 1, u32 N, N x 3 f32, all
// little-endian. ASCII ".xyz": three decimals per line.

namespace detail {

template <class T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    os.write(bytes.data(), sizeof(T));
  } else {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
}

template <class T>
T read_le(std::istream& is, const std::string& what) {
  std::array<char, sizeof(T)> bytes{};
  if (!is.read(bytes.data(), sizeof(T))) {
    throw FormatError("truncated " + what);
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  return std::bit_cast<T>(bytes);
}

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& what) {
  char got[4] = {};
  if (!is.read(got, 4) || std::memcmp(got, magic, 4) != 0) {
    throw FormatError(what + ": bad magic, expected " + magic);
  }
}

}  // namespace detail

inline constexpr std::uint32_t kScanFormatVersion = 1;

inline void write_scan(const std::filesystem::path& path, const PointCloud& cloud) {
  if (path.extension() == ".xyz") {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << std::setprecision(9);
    for (const auto& p : cloud) os << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
    if (!os) throw IoError("write failed: " + path.string());
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write("FMPC", 4);
  detail::write_le<std::uint32_t>(os, kScanFormatVersion);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cloud.size()));
  for (const auto& p : cloud) {
    for (int c = 0; c < 3; ++c) detail::write_le<float>(os, static_cast<float>(p[c]));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

inline PointCloud read_scan(const std::filesystem::path& path) {
  const std::string name = path.string();
  if (path.extension() == ".xyz") {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + name);
    std::vector<Vec3> pts;
    std::string line;
    while (std::getline(is, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
      std::istringstream ls(line);
      Vec3 p;
      if (!(ls >> p.x() >> p.y() >> p.z())) throw FormatError(name + ": malformed line '" + line + "'");
      pts.push_back(p);
    }
    try {
      return PointCloud(std::move(pts));
    } catch (const FormatError& e) {
      throw FormatError(name + ": " + e.what());
    }
  }
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + name);
  detail::expect_magic(is, "FMPC", name);
  const auto version = detail::read_le<std::uint32_t>(is, name);
  if (version != kScanFormatVersion) {
    throw FormatError(name + ": unsupported scan version " + std::to_string(version));
  }
  const auto n = detail::read_le<std::uint32_t>(is, name);
  std::vector<Vec3> pts(n);
  for (auto& p : pts) {
    for (int c = 0; c < 3; ++c) p[c] = detail::read_le<float>(is, name);
  }
  try {
    return PointCloud(std::move(pts));
  } catch (const FormatError& e) {
    throw FormatError(name + ": " + e.what());
  }
}

}  // namespace flashmix
