#include <gtest/gtest.h>

#include <cmath>

#include "flashmix/losses.hpp"
#include "flashmix/pipeline.hpp"
#include "support.hpp"

using namespace flashmix;
using fmtest::Md;

namespace {

Md mat(std::initializer_list<std::initializer_list<double>> rows) {
  Md m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

}  // namespace

TEST(PoseLoss, HandCases) {
  const Md z = Md::Zero(1, 3);
  const auto same = pose_loss<double>(z, z, z, z, 1.0);
  EXPECT_EQ(same.value, 0.0);
  EXPECT_EQ(same.da.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(same.db.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_DOUBLE_EQ(pose_loss<double>(mat({{1, 0, 0}}), z, z, z, 1.0).value, 1.0);
  EXPECT_DOUBLE_EQ(pose_loss<double>(mat({{1, -2, 0}}), mat({{0.5, 0, 0}}), z, z, 2.0).value, 4.0);
}

TEST(PoseLoss, BatchMean) {
  const Md t = mat({{1, 0, 0}, {0, 3, 0}});
  const Md z = Md::Zero(2, 3);
  const auto r = pose_loss<double>(t, z, z, z, 1.0);
  EXPECT_DOUBLE_EQ(r.value, 2.0);
  EXPECT_DOUBLE_EQ(r.da(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(r.da(0, 1), 0.0);
}

TEST(Barlow, HandCases) {
  const Md I = mat({{1, 0}, {0, 1}});
  const Md S = mat({{0, 1}, {1, 0}});
  EXPECT_NEAR(barlow_twins_loss<double>(I, I, 0.005).value, 0.0, 1e-12);
  EXPECT_NEAR(barlow_twins_loss<double>(I, S, 0.005).value, 2.01, 1e-12);
  EXPECT_THROW(barlow_twins_loss<double>(mat({{1, 0}}), mat({{1, 0}}), 0.005), DegenerateBatch);
}

TEST(Barlow, ColumnScaleInvariance) {
  SplitMix64 rng(1);
  const Md a = fmtest::random_matrix(8, 6, rng);
  const Md b = fmtest::random_matrix(8, 6, rng);
  Md sa = a, sb = b;
  for (int j = 0; j < 6; ++j) {
    sa.col(j) *= 0.1 + 3.0 * rng.uniform();
    sb.col(j) *= 0.1 + 3.0 * rng.uniform();
  }
  EXPECT_NEAR(barlow_twins_loss<double>(a, b, 0.005).value, barlow_twins_loss<double>(sa, sb, 0.005).value, 1e-6);
}

TEST(Barlow, Gradients) {
  EXPECT_LE(fmtest::grad_barlow(false), 1e-4);
  EXPECT_LE(fmtest::grad_barlow(true), 1e-4);
}

TEST(Triplet, HandCases) {
  const Md e0 = mat({{1, 0}});
  const Md e1 = mat({{0, 1}});
  const auto ok = triplet_loss<double>(e0, e0, e1, 0.05);
  EXPECT_EQ(ok.value, 0.0);
  EXPECT_EQ(ok.da.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(ok.db.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(ok.dc.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_NEAR(triplet_loss<double>(e0, e1, e0, 0.05).value, 2.05, 1e-12);
}

TEST(Triplet, Gradients) { EXPECT_LE(fmtest::grad_triplet(), 1e-4); }

TEST(NTXent, HandCase) {
  const Md I = mat({{1, 0}, {0, 1}});
  Eigen::VectorXd rows;
  const auto r = ntxent_loss<double>(I, I, 1.0, false, &rows);
  EXPECT_NEAR(rows[0], -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)), 1e-12);
  EXPECT_NEAR(r.value, 0.6266, 1e-4);
  EXPECT_LT(ntxent_loss<double>(I, I, 0.01).value, 1e-12);
  EXPECT_THROW(ntxent_loss<double>(mat({{1, 0}}), mat({{1, 0}}), 1.0), DegenerateBatch);
}

TEST(NTXent, PermutationCovariance) {
  SplitMix64 rng(2);
  const Md a = fmtest::unit_rows(fmtest::random_matrix(6, 4, rng));
  const Md b = fmtest::unit_rows(fmtest::random_matrix(6, 4, rng));
  const std::vector<int> perm{3, 0, 5, 1, 4, 2};
  Md pa(6, 4), pb(6, 4);
  for (int i = 0; i < 6; ++i) {
    pa.row(i) = a.row(perm[i]);
    pb.row(i) = b.row(perm[i]);
  }
  Eigen::VectorXd r0, r1;
  const double v0 = ntxent_loss<double>(a, b, 0.2, false, &r0).value;
  const double v1 = ntxent_loss<double>(pa, pb, 0.2, false, &r1).value;
  EXPECT_NEAR(v0, v1, 1e-12);
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(r1[i], r0[perm[i]], 1e-12);
}

TEST(NTXent, Gradients) {
  EXPECT_LE(fmtest::grad_ntxent(false), 1e-4);
  EXPECT_LE(fmtest::grad_ntxent(true), 1e-4);
}

TEST(Siglip, HandCase) {
  const Md e = mat({{1, 0}});
  const double tbar = std::log(1.0 / 0.07);
  const auto r = siglip_loss<double>(e, e, tbar, 0.0);
  EXPECT_NEAR(r.value, std::log1p(std::exp(-1.0 / 0.07)), 1e-15);
  EXPECT_NEAR(r.value, 6.2e-7, 0.05e-7);
  EXPECT_GE(r.value, 0.0);
}

TEST(Siglip, BiasDirectionProbe) {
  const Md e = mat({{1, 0}});
  // With the bias subtracted, a large positive b pushes the diagonal logit
  // down and the loss up; a large negative b does the opposite.
  const double lo = siglip_loss<double>(e, e, 0.0, -5.0).value;
  const double hi = siglip_loss<double>(e, e, 0.0, 5.0).value;
  EXPECT_GT(hi, 3.0);
  EXPECT_LT(lo, 0.01);
  const double flipped = siglip_loss<double>(e, e, 0.0, 5.0, false).value;
  EXPECT_LT(flipped, 0.01);
}

TEST(Siglip, Gradients) {
  EXPECT_LE(fmtest::grad_siglip(true), 1e-4);
  EXPECT_LE(fmtest::grad_siglip(false), 1e-4);
}

TEST(Losses, NonNegativeOnRandomInputs) {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Md a = fmtest::unit_rows(fmtest::random_matrix(5, 4, rng));
    const Md b = fmtest::unit_rows(fmtest::random_matrix(5, 4, rng));
    const Md c = fmtest::unit_rows(fmtest::random_matrix(5, 4, rng));
    EXPECT_GE(barlow_twins_loss<double>(a, b, 0.005).value, 0.0);
    EXPECT_GE(triplet_loss<double>(a, b, c, 0.05).value, 0.0);
    EXPECT_GE(ntxent_loss<double>(a, b, 0.07).value, 0.0);
    EXPECT_GE(siglip_loss<double>(a, b, rng.normal(), rng.normal()).value, 0.0);
  }
}

TEST(LossConfig, ParseAndValidate) {
  EXPECT_EQ(parse_reg_kind("barlow"), RegKind::Barlow);
  EXPECT_EQ(parse_reg_kind("siglip"), RegKind::SigLIP);
  EXPECT_EQ(to_string(RegKind::NTXent), "ntxent");
  EXPECT_THROW(parse_reg_kind("vicreg"), std::invalid_argument);
  LossConfig c;
  c.tau = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Composite, Gradients) {
  for (auto k : {RegKind::None, RegKind::Barlow, RegKind::Triplet, RegKind::NTXent, RegKind::SigLIP}) {
    EXPECT_LE(fmtest::grad_composite(k), 1e-3) << to_string(k);
  }
}

TEST(Composite, ZeroWeightMatchesPoseOnly) {
  nn::ModelConfig mc;
  mc.mixer.M = 6;
  mc.mixer.d = 8;
  mc.mixer.l = 12;
  mc.trunk_layers = 2;
  const Eigen::Index B = 4;
  SplitMix64 rng(4);
  const Md F = fmtest::random_matrix(2 * B * 6, 8, rng);
  const Md tg = fmtest::random_matrix(B, 3, rng);
  const Md qg = fmtest::random_matrix(B, 3, rng);

  const auto grads = [&](const LossConfig& lc, double& pose_value) {
    nn::RegressorModel<double> model(mc);
    model.init(9);
    model.zero_grad();
    ModelCache<double> cache;
    const Md input = lc.reg_active() ? F : Md(F.topRows(B * 6));
    pose_value = composite_loss<double>(model, input, B, tg, qg, lc, cache).total;
    std::vector<Md> out;
    for (auto* p : model.parameters()) out.push_back(p->grad);
    return out;
  };
  LossConfig none;
  LossConfig zero;
  zero.reg_kind = RegKind::Barlow;
  zero.reg_weight = 0.0;
  double v0 = 0, v1 = 0;
  const auto g0 = grads(none, v0);
  const auto g1 = grads(zero, v1);
  EXPECT_EQ(v0, v1);
  ASSERT_EQ(g0.size(), g1.size());
  for (std::size_t i = 0; i < g0.size(); ++i) EXPECT_LE((g0[i] - g1[i]).cwiseAbs().maxCoeff(), 1e-12);
}
