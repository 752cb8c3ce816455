#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "flashmix/dataset.hpp"
#include "flashmix/encoder.hpp"
#include "flashmix/error.hpp"
#include "flashmix/geometry.hpp"
#include "flashmix/rng.hpp"

namespace flashmix {

/// Precomputed descriptors for every scan of a scene. Immutable once built.
struct TrainingBuffer {
  std::vector<DescriptorSet> entries;
  std::uint64_t encoder_hash = 0;
  std::uint32_t M = 0;
  std::uint32_t d = 0;

  std::size_t size() const { return entries.size(); }

  void validate() const {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      if (e.F.rows() != M || e.F.cols() != d) {
        throw ShapeMismatch("buffer entry " + std::to_string(e.scan_id) + " is not " + std::to_string(M) + "x" +
                            std::to_string(d));
      }
      if (i > 0 && entries[i - 1].scan_id >= e.scan_id) {
        throw FormatError("buffer scan ids must be unique and sorted");
      }
    }
  }

  void check_encoder(std::uint64_t expected) const {
    if (expected != encoder_hash) {
      throw EncoderMismatch("buffer was built with a different encoder configuration");
    }
  }
};

/// Per-scan FPS seed; the scan id keeps every scan on its own stream.
inline std::uint64_t fps_seed_for(std::uint64_t seed, std::uint32_t scan_id) {
  return derive_seed(seed, 0x667073ULL, scan_id);
}

/// Loads, preprocesses and encodes one scan.
inline DescriptorSet encode_scan(const std::filesystem::path& file, const Pose& pose, std::uint32_t scan_id,
                                 const EncoderConfig& cfg, std::size_t m, std::uint64_t seed) {
  const PointCloud raw = read_scan(file);
  PointCloud cloud;
  try {
    cloud = preprocess(raw, cfg);
  } catch (const EmptyScan&) {
    throw EmptyScan("scan " + std::to_string(scan_id) + " (" + file.string() + ") is empty");
  }
  if (cloud.empty()) {
    throw EmptyScan("scan " + std::to_string(scan_id) + " (" + file.string() + ") is empty after preprocessing");
  }
  DescriptorSet ds = encode(cloud, cfg, m, fps_seed_for(seed, scan_id));
  ds.pose = pose;
  ds.scan_id = scan_id;
  return ds;
}

/// Encodes every scan of one split. Scans are processed on `threads` workers
/// and assembled in scan-id order, so the result does not depend on the
/// thread count.
inline TrainingBuffer build_buffer(const Manifest& manifest, const EncoderConfig& cfg, std::size_t m,
                                   std::uint64_t seed, const std::string& split = "train",
                                   const std::function<void(std::size_t, std::size_t)>& progress = {},
                                   unsigned threads = 1) {
  cfg.validate();
  const auto& scans = manifest.scans(split);
  const std::vector<Pose> poses = read_poses(manifest.poses_file(split));
  if (poses.size() != scans.size()) {
    throw FormatError("manifest lists " + std::to_string(scans.size()) + " " + split + " scans but " +
                      std::to_string(poses.size()) + " poses");
  }
  TrainingBuffer buf;
  buf.encoder_hash = cfg.hash();
  buf.M = static_cast<std::uint32_t>(m);
  buf.d = static_cast<std::uint32_t>(cfg.d);
  buf.entries.resize(scans.size());

  threads = std::max(1U, threads);
  if (threads == 1) {
    for (std::size_t i = 0; i < scans.size(); ++i) {
      buf.entries[i] = encode_scan(scans[i], poses[i], static_cast<std::uint32_t>(i), cfg, m, seed);
      if (progress) progress(i + 1, scans.size());
    }
    return buf;
  }

  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < scans.size(); i += threads) {
            buf.entries[i] = encode_scan(scans[i], poses[i], static_cast<std::uint32_t>(i), cfg, m, seed);
          }
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  if (progress) progress(scans.size(), scans.size());
  return buf;
}

// ---------------------------------------------------------------------------
// Buffer file: "FMBF", u32 version = 1, u64 encoder_hash, u32 n_entries,
// u32 M, u32 d; then per entry u32 scan_id, 7 x f64 pose (tx ty tz qw qx qy
// qz), M*d f32 row-major. Little-endian throughout.

inline constexpr std::uint32_t kBufferFormatVersion = 1;
inline constexpr std::size_t kBufferHeaderBytes = 4 + 4 + 8 + 4 + 4 + 4;
inline constexpr std::size_t kBufferEntryOverheadBytes = 4 + 7 * 8;

inline std::size_t buffer_file_size(std::size_t n_entries, std::size_t m, std::size_t d) {
  return kBufferHeaderBytes + n_entries * (m * d * sizeof(float) + kBufferEntryOverheadBytes);
}

inline void save_buffer(const std::filesystem::path& path, const TrainingBuffer& buf) {
  buf.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  using detail::write_le;
  os.write("FMBF", 4);
  write_le<std::uint32_t>(os, kBufferFormatVersion);
  write_le<std::uint64_t>(os, buf.encoder_hash);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(buf.entries.size()));
  write_le<std::uint32_t>(os, buf.M);
  write_le<std::uint32_t>(os, buf.d);
  for (const auto& e : buf.entries) {
    write_le<std::uint32_t>(os, e.scan_id);
    for (double v : {e.pose.t.x(), e.pose.t.y(), e.pose.t.z(), e.pose.q.w(), e.pose.q.x(), e.pose.q.y(), e.pose.q.z()}) {
      write_le<double>(os, v);
    }
    for (Eigen::Index i = 0; i < e.F.size(); ++i) write_le<float>(os, e.F.data()[i]);
  }
  if (!os) throw IoError("write failed: " + path.string());
}

inline TrainingBuffer load_buffer(const std::filesystem::path& path) {
  const std::string name = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + name);
  using detail::read_le;
  detail::expect_magic(is, "FMBF", name);
  const auto version = read_le<std::uint32_t>(is, name);
  if (version != kBufferFormatVersion) {
    throw FormatError(name + ": unsupported buffer version " + std::to_string(version));
  }
  TrainingBuffer buf;
  buf.encoder_hash = read_le<std::uint64_t>(is, name);
  const auto n = read_le<std::uint32_t>(is, name);
  buf.M = read_le<std::uint32_t>(is, name);
  buf.d = read_le<std::uint32_t>(is, name);
  buf.entries.resize(n);
  for (auto& e : buf.entries) {
    e.scan_id = read_le<std::uint32_t>(is, name);
    double v[7];
    for (double& x : v) x = read_le<double>(is, name);
    e.pose.t = Vec3(v[0], v[1], v[2]);
    e.pose.q = Quaternion(v[3], v[4], v[5], v[6]);
    e.F.resize(buf.M, buf.d);
    for (Eigen::Index i = 0; i < e.F.size(); ++i) e.F.data()[i] = read_le<float>(is, name);
    if (!e.F.allFinite()) throw FormatError(name + ": non-finite descriptor in entry " + std::to_string(e.scan_id));
  }
  buf.validate();
  return buf;
}

// ---------------------------------------------------------------------------
// Positive / negative mining

struct MiningConfig {
  double d_pos = 2.0;
  double d_neg = 10.0;
};

/// Positive and negative candidate lists for every buffer entry, by
/// ground-truth translation distance.
class MiningIndex {
 public:
  MiningIndex(const TrainingBuffer& buf, const MiningConfig& cfg) : cfg_(cfg) {
    const std::size_t n = buf.size();
    positives_.resize(n);
    negatives_.resize(n);
    farthest_.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      double far = -1.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i || buf.entries[j].scan_id == buf.entries[i].scan_id) continue;
        const double dist = translation_error(buf.entries[i].pose, buf.entries[j].pose);
        if (cfg.d_pos > 0.0 && dist <= cfg.d_pos) positives_[i].push_back(static_cast<std::uint32_t>(j));
        if (dist >= cfg.d_neg) negatives_[i].push_back(static_cast<std::uint32_t>(j));
        if (dist > far) {
          far = dist;
          farthest_[i] = static_cast<std::uint32_t>(j);
        }
      }
      if (!positives_[i].empty()) with_positive_.push_back(static_cast<std::uint32_t>(i));
    }
  }

  const MiningConfig& config() const { return cfg_; }
  const std::vector<std::uint32_t>& positives(std::size_t i) const { return positives_[i]; }
  const std::vector<std::uint32_t>& negatives(std::size_t i) const { return negatives_[i]; }
  std::uint32_t farthest(std::size_t i) const { return farthest_[i]; }
  bool has_positives() const { return !with_positive_.empty(); }
  std::size_t queries_with_positives() const { return with_positive_.size(); }

 private:
  MiningConfig cfg_;
  std::vector<std::vector<std::uint32_t>> positives_;
  std::vector<std::vector<std::uint32_t>> negatives_;
  std::vector<std::uint32_t> farthest_;
  std::vector<std::uint32_t> with_positive_;
};

/// Buffer indices of one training batch.
struct Batch {
  std::vector<std::uint32_t> query;
  std::vector<std::uint32_t> positive;
  std::vector<std::uint32_t> negative;
  std::vector<char> negative_fallback;  // 1 where no entry was >= d_neg away
  std::size_t fallbacks = 0;

  std::size_t size() const { return query.size(); }
};

/// Draws B queries uniformly (redrawing those without positives), one
/// uniform positive and one uniform negative each. When a query has no entry
/// at least d_neg away, its farthest entry stands in and the fallback flag is
/// set.
inline Batch sample_batch(const TrainingBuffer& buf, const MiningIndex& index, std::size_t batch_size,
                          SplitMix64& rng) {
  if (buf.size() < 2) {
    throw DegenerateBatch("sampling needs at least two buffer entries");
  }
  if (!index.has_positives()) {
    throw NoPositives("no buffer entry has a positive within d_pos = " + std::to_string(index.config().d_pos) + " m");
  }
  Batch b;
  b.query.reserve(batch_size);
  b.positive.reserve(batch_size);
  b.negative.reserve(batch_size);
  b.negative_fallback.reserve(batch_size);
  for (std::size_t k = 0; k < batch_size; ++k) {
    std::size_t q = rng.index(buf.size());
    while (index.positives(q).empty()) q = rng.index(buf.size());
    const auto& pos = index.positives(q);
    const auto& neg = index.negatives(q);
    b.query.push_back(static_cast<std::uint32_t>(q));
    b.positive.push_back(pos[rng.index(pos.size())]);
    if (neg.empty()) {
      b.negative.push_back(index.farthest(q));
      b.negative_fallback.push_back(1);
      ++b.fallbacks;
    } else {
      b.negative.push_back(neg[rng.index(neg.size())]);
      b.negative_fallback.push_back(0);
    }
  }
  return b;
}

/// Stacks the descriptor matrices of `ids` into a (|ids| * M) x d matrix.
template <class T = float>
Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gather(const TrainingBuffer& buf,
                                                                         const std::vector<std::uint32_t>& ids) {
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(ids.size() * buf.M, buf.d);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    out.middleRows(static_cast<Eigen::Index>(k * buf.M), buf.M) = buf.entries[ids[k]].F.template cast<T>();
  }
  return out;
}

}  // namespace flashmix
