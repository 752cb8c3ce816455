#include <gtest/gtest.h>

#include <fstream>

#include "flashmix/buffer.hpp"
#include "flashmix/dataset.hpp"
#include "support.hpp"

using namespace flashmix;

namespace {

const Manifest& small_dataset() {
  static const Manifest m = [] {
    DatasetSpec spec;
    spec.train_poses = 10;
    spec.test_poses = 3;
    return write_dataset(fmtest::scratch_dir("buffer_ds"), spec);
  }();
  return m;
}

TrainingBuffer line_buffer(int n, double spacing) {
  TrainingBuffer buf;
  buf.M = 2;
  buf.d = 3;
  for (int i = 0; i < n; ++i) {
    DescriptorSet ds;
    ds.F = DescriptorMatrix::Constant(2, 3, static_cast<float>(i));
    ds.pose = Pose{Vec3(spacing * i, 0, 0), Quaternion::identity()};
    ds.scan_id = static_cast<std::uint32_t>(i);
    buf.entries.push_back(ds);
  }
  return buf;
}

}  // namespace

TEST(Buffer, BuildShapeAndDeterminism) {
  EncoderConfig cfg;
  cfg.d = 16;
  const auto a = build_buffer(small_dataset(), cfg, 32, 5);
  ASSERT_EQ(a.size(), 10U);
  for (const auto& e : a.entries) {
    EXPECT_EQ(e.F.rows(), 32);
    EXPECT_EQ(e.F.cols(), 16);
  }
  const auto b = build_buffer(small_dataset(), cfg, 32, 5, "train", {}, 3);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.entries[i].F, b.entries[i].F);

  const auto dir = fmtest::scratch_dir("buffer_files");
  save_buffer(dir / "a.fmbf", a);
  save_buffer(dir / "b.fmbf", b);
  EXPECT_EQ(file_hash(dir / "a.fmbf"), file_hash(dir / "b.fmbf"));
  EXPECT_EQ(std::filesystem::file_size(dir / "a.fmbf"), buffer_file_size(10, 32, 16));
}

TEST(Buffer, RoundTrip) {
  EncoderConfig cfg;
  cfg.d = 8;
  const auto a = build_buffer(small_dataset(), cfg, 16, 1);
  const auto dir = fmtest::scratch_dir("buffer_rt");
  save_buffer(dir / "a.fmbf", a);
  const auto b = load_buffer(dir / "a.fmbf");
  EXPECT_EQ(b.encoder_hash, a.encoder_hash);
  EXPECT_EQ(b.M, a.M);
  EXPECT_EQ(b.d, a.d);
  ASSERT_EQ(b.size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(b.entries[i].F, a.entries[i].F);
    EXPECT_EQ(b.entries[i].scan_id, a.entries[i].scan_id);
    EXPECT_EQ(b.entries[i].pose.t, a.entries[i].pose.t);
    EXPECT_EQ(b.entries[i].pose.q, a.entries[i].pose.q);
  }
  save_buffer(dir / "b.fmbf", b);
  EXPECT_EQ(file_hash(dir / "a.fmbf"), file_hash(dir / "b.fmbf"));
  EXPECT_NO_THROW(b.check_encoder(cfg.hash()));
  cfg.voxel = 0.25;
  EXPECT_THROW(b.check_encoder(cfg.hash()), EncoderMismatch);
}

TEST(Buffer, DefaultSizeFormula) {
  EXPECT_EQ(buffer_file_size(2000, 512, 32), kBufferHeaderBytes + 2000 * (512 * 32 * 4 + 60));
}

TEST(Buffer, CorruptScanNamesFile) {
  const auto dir = fmtest::scratch_dir("buffer_corrupt");
  DatasetSpec spec;
  spec.train_poses = 3;
  spec.test_poses = 1;
  const Manifest m = write_dataset(dir, spec);
  {
    std::ofstream os(m.train_scans[1], std::ios::binary | std::ios::trunc);
    os << "FMPCgarbage";
  }
  try {
    build_buffer(m, EncoderConfig{}, 16, 1);
    FAIL() << "expected an error";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("000001.fmpc"), std::string::npos) << e.what();
  }
}

TEST(Mining, PairsRespectThresholds) {
  const auto buf = line_buffer(30, 1.0);
  const MiningIndex index(buf, MiningConfig{2.0, 10.0});
  SplitMix64 rng(3);
  const Batch b = sample_batch(buf, index, 64, rng);
  ASSERT_EQ(b.size(), 64U);
  for (std::size_t k = 0; k < b.size(); ++k) {
    const auto& q = buf.entries[b.query[k]];
    EXPECT_NE(b.query[k], b.positive[k]);
    EXPECT_LE(translation_error(q.pose, buf.entries[b.positive[k]].pose), 2.0);
    if (!b.negative_fallback[k]) {
      EXPECT_GE(translation_error(q.pose, buf.entries[b.negative[k]].pose), 10.0);
    }
  }
}

TEST(Mining, Reproducible) {
  const auto buf = line_buffer(30, 1.0);
  const MiningIndex index(buf, MiningConfig{});
  SplitMix64 a(9), b(9);
  const Batch x = sample_batch(buf, index, 16, a);
  const Batch y = sample_batch(buf, index, 16, b);
  EXPECT_EQ(x.query, y.query);
  EXPECT_EQ(x.positive, y.positive);
  EXPECT_EQ(x.negative, y.negative);
}

TEST(Mining, TwoEntryFallback) {
  const auto buf = line_buffer(2, 1.0);
  const MiningIndex index(buf, MiningConfig{2.0, 10.0});
  SplitMix64 rng(1);
  const Batch b = sample_batch(buf, index, 1, rng);
  EXPECT_EQ(b.positive[0], 1 - b.query[0]);
  EXPECT_EQ(b.negative[0], 1 - b.query[0]);
  EXPECT_EQ(b.negative_fallback[0], 1);
  EXPECT_EQ(b.fallbacks, 1U);
}

TEST(Mining, Errors) {
  const auto buf = line_buffer(5, 1.0);
  SplitMix64 rng(1);
  EXPECT_THROW(sample_batch(buf, MiningIndex(buf, MiningConfig{0.0, 10.0}), 4, rng), NoPositives);
  const auto far = line_buffer(5, 5.0);
  EXPECT_THROW(sample_batch(far, MiningIndex(far, MiningConfig{2.0, 10.0}), 4, rng), NoPositives);
  const auto one = line_buffer(1, 1.0);
  EXPECT_THROW(sample_batch(one, MiningIndex(one, MiningConfig{}), 1, rng), DegenerateBatch);
}

TEST(Mining, DefaultTrajectoryAlwaysHasPositives) {
  const auto w = synth::generate_world(7, 50, 40);
  const auto t = synth::generate_trajectory(w, 2000, 1.0, 11);
  TrainingBuffer buf;
  buf.M = 1;
  buf.d = 1;
  for (std::size_t i = 0; i < t.poses.size(); ++i) {
    buf.entries.push_back(DescriptorSet{DescriptorMatrix::Zero(1, 1), t.poses[i], static_cast<std::uint32_t>(i)});
  }
  const MiningIndex index(buf, MiningConfig{});
  EXPECT_EQ(index.queries_with_positives(), buf.size());
}

TEST(Gather, StacksRows) {
  const auto buf = line_buffer(4, 1.0);
  const auto m = gather<double>(buf, {2, 0});
  ASSERT_EQ(m.rows(), 4);
  EXPECT_EQ(m(0, 0), 2.0);
  EXPECT_EQ(m(3, 2), 0.0);
}
