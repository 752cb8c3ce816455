#pragma once

// Test-side oracles shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "flashmix/losses.hpp"
#include "flashmix/nn/layers.hpp"
#include "flashmix/nn/mixer.hpp"
#include "flashmix/nn/model.hpp"
#include "flashmix/nn/predictor.hpp"
#include "flashmix/pipeline.hpp"
#include "flashmix/pointcloud.hpp"
#include "flashmix/rng.hpp"

namespace fmtest {

using flashmix::SplitMix64;
using Md = flashmix::nn::Matrix<double>;

inline Md random_matrix(Eigen::Index r, Eigen::Index c, SplitMix64& rng, double scale = 1.0) {
  Md m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline Md unit_rows(Md m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
  return m;
}

/// Elementwise relative error |a - n| / max(|a| + |n|, floor).
inline double rel_err(double a, double n, double floor = 1e-7) {
  return std::abs(a - n) / std::max(std::abs(a) + std::abs(n), floor);
}

/// Largest relative error between `analytic` and central differences of
/// `loss` with respect to every entry of `x`. The denominator never drops
/// below the round-off level of the difference quotient, so entries whose
/// true gradient is zero are not judged on rounding noise alone.
inline double fd_check(const std::function<double()>& loss, Md& x, const Md& analytic, double h = 1e-5) {
  const double f0 = std::abs(loss());
  const double floor = std::max(1e-7, 1e5 * std::numeric_limits<double>::epsilon() * std::max(f0, 1.0) / h);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = loss();
    x.data()[i] = keep - h;
    const double down = loss();
    x.data()[i] = keep;
    worst = std::max(worst, rel_err(analytic.data()[i], (up - down) / (2 * h), floor));
  }
  return worst;
}

/// Checks every parameter of a module. `run` must zero gradients, run
/// forward and backward and return the loss.
inline double fd_check_params(const std::function<double()>& run,
                              const std::vector<flashmix::nn::Parameter<double>*>& params, double h = 1e-5) {
  run();
  std::vector<Md> grads;
  for (auto* p : params) grads.push_back(p->grad);
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    worst = std::max(worst, fd_check(run, params[k]->value, grads[k], h));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Gradient suite (64-bit). Each returns the worst relative error.

namespace nn = flashmix::nn;

inline double grad_linear() {
  SplitMix64 rng(101);
  nn::Linear<double> lin("lin", 5, 4);
  lin.init(rng);
  lin.bias.value = random_matrix(1, 4, rng);
  Md x = random_matrix(6, 5, rng);
  const Md R = random_matrix(6, 4, rng);
  const auto run = [&] {
    lin.weight.zero_grad();
    lin.bias.zero_grad();
    const Md y = lin.forward(x);
    lin.backward(x, R);
    return (y.array() * R.array()).sum();
  };
  double worst = fd_check_params(run, {&lin.weight, &lin.bias});
  const Md dx = lin.backward(x, R);
  worst = std::max(worst, fd_check([&] { return (lin.forward(x).array() * R.array()).sum(); }, x, dx));
  return worst;
}

inline double grad_layernorm() {
  SplitMix64 rng(102);
  nn::LayerNorm<double> ln("ln", 6);
  ln.gamma.value = random_matrix(1, 6, rng);
  ln.beta.value = random_matrix(1, 6, rng);
  Md x = random_matrix(5, 6, rng, 2.0);
  const Md R = random_matrix(5, 6, rng);
  typename nn::LayerNorm<double>::Cache c;
  const auto run = [&] {
    ln.gamma.zero_grad();
    ln.beta.zero_grad();
    const Md y = ln.forward(x, c);
    ln.backward(c, R);
    return (y.array() * R.array()).sum();
  };
  double worst = fd_check_params(run, {&ln.gamma, &ln.beta});
  ln.forward(x, c);
  const Md dx = ln.backward(c, R);
  worst = std::max(worst, fd_check([&] { return (ln.forward(x, c).array() * R.array()).sum(); }, x, dx));
  return worst;
}

inline double grad_batchnorm() {
  SplitMix64 rng(103);
  nn::BatchNorm<double> bn("bn", 4);
  bn.gamma.value = random_matrix(1, 4, rng);
  bn.beta.value = random_matrix(1, 4, rng);
  Md x = random_matrix(7, 4, rng, 3.0);
  const Md R = random_matrix(7, 4, rng);
  typename nn::BatchNorm<double>::Cache c;
  const auto run = [&] {
    bn.gamma.zero_grad();
    bn.beta.zero_grad();
    const Md y = bn.forward(x, c, true);
    bn.backward(c, R);
    return (y.array() * R.array()).sum();
  };
  double worst = fd_check_params(run, {&bn.gamma, &bn.beta});
  bn.forward(x, c, true);
  const Md dx = bn.backward(c, R);
  worst = std::max(worst, fd_check([&] { return (bn.forward(x, c, true).array() * R.array()).sum(); }, x, dx));
  return worst;
}

inline double grad_gelu() {
  SplitMix64 rng(104);
  Md x = random_matrix(4, 5, rng, 2.0);
  const Md R = random_matrix(4, 5, rng);
  const Md dx = nn::gelu_backward(x, R);
  return fd_check([&] { return (nn::gelu(x).array() * R.array()).sum(); }, x, dx);
}

inline double grad_tanh() {
  SplitMix64 rng(105);
  Md x = random_matrix(4, 5, rng);
  const Md R = random_matrix(4, 5, rng);
  const Md dx = nn::tanh_backward(nn::tanh(x), R);
  return fd_check([&] { return (nn::tanh(x).array() * R.array()).sum(); }, x, dx);
}

inline nn::MixerAggregator<double> small_mixer(int layers, bool residual, std::uint64_t seed) {
  nn::MixerConfig cfg;
  cfg.M = 8;
  cfg.d = 8;
  cfg.l = 16;
  cfg.layers = layers;
  cfg.residual = residual;
  nn::MixerAggregator<double> m(cfg);
  SplitMix64 rng(seed);
  m.init(rng);
  for (auto* p : [&] {
         std::vector<nn::Parameter<double>*> v;
         m.collect(v);
         return v;
       }()) {
    if (p->name.find("norm") != std::string::npos) p->value.array() += 0.3 * random_matrix(1, p->value.cols(), rng).array();
    if (p->name.find("bias") != std::string::npos) p->value = random_matrix(1, p->value.cols(), rng, 0.3);
  }
  return m;
}

/// Whole aggregator (both mixing MLPs, projection and average pooling),
/// parameters and input, batch of 2.
inline double grad_mixer(int layers = 1, bool residual = true) {
  auto m = small_mixer(layers, residual, 106);
  SplitMix64 rng(107);
  Md F = random_matrix(2 * 8, 8, rng);
  const Md R = random_matrix(2, 16, rng);
  nn::MixerCache<double> c;
  std::vector<nn::Parameter<double>*> params;
  m.collect(params);
  const auto run = [&] {
    for (auto* p : params) p->zero_grad();
    const Md y = nn::mixer_forward(m, F, c);
    nn::mixer_backward(m, c, R);
    return (y.array() * R.array()).sum();
  };
  double worst = fd_check_params(run, params);
  nn::mixer_forward(m, F, c);
  const Md dF = nn::mixer_backward(m, c, R);
  worst = std::max(worst, fd_check([&] { return (nn::mixer_forward(m, F, c).array() * R.array()).sum(); }, F, dF));
  return worst;
}

/// Average pooling on its own: mixing disabled, projection only.
inline double grad_gap() { return grad_mixer(0, true); }

inline double grad_predictor() {
  nn::PosePredictor<double> p(nn::PredictorConfig{6, 3, 0});
  SplitMix64 rng(108);
  p.init(rng);
  Md g = random_matrix(5, 6, rng);
  const Md Rt = random_matrix(5, 3, rng);
  const Md Rq = random_matrix(5, 3, rng);
  typename nn::PosePredictor<double>::Cache c;
  std::vector<nn::Parameter<double>*> params;
  p.collect(params);
  const auto value = [&] {
    const auto o = p.forward(g, c, true);
    return (o.t.array() * Rt.array()).sum() + (o.q.array() * Rq.array()).sum();
  };
  const auto run = [&] {
    for (auto* q : params) q->zero_grad();
    const double v = value();
    p.backward(c, Rt, Rq);
    return v;
  };
  double worst = fd_check_params(run, params);
  value();
  const Md dg = p.backward(c, Rt, Rq);
  worst = std::max(worst, fd_check(value, g, dg));
  return worst;
}

inline double grad_projector() {
  nn::Projector<double> p(nn::ProjectorConfig{6, 5, 4});
  SplitMix64 rng(109);
  p.init(rng);
  p.fc1.bias.value = random_matrix(1, 5, rng, 0.5);
  Md g = random_matrix(4, 6, rng);
  const Md R = random_matrix(4, 4, rng);
  typename nn::Projector<double>::Cache c;
  std::vector<nn::Parameter<double>*> params;
  p.collect(params);
  const auto run = [&] {
    for (auto* q : params) q->zero_grad();
    const Md y = p.forward(g, c);
    p.backward(c, R);
    return (y.array() * R.array()).sum();
  };
  double worst = fd_check_params(run, params);
  p.forward(g, c);
  const Md dg = p.backward(c, R);
  worst = std::max(worst, fd_check([&] { return (p.forward(g, c).array() * R.array()).sum(); }, g, dg));
  return worst;
}

inline double grad_pose_loss() {
  SplitMix64 rng(110);
  Md t = random_matrix(4, 3, rng);
  Md q = random_matrix(4, 3, rng);
  const Md tg = random_matrix(4, 3, rng);
  const Md qg = random_matrix(4, 3, rng);
  const auto r = flashmix::pose_loss<double>(t, q, tg, qg, 1.7);
  const auto f = [&] { return flashmix::pose_loss<double>(t, q, tg, qg, 1.7).value; };
  return std::max(fd_check(f, t, r.da), fd_check(f, q, r.db));
}

inline double grad_barlow(bool standardize = false) {
  SplitMix64 rng(111);
  Md a = random_matrix(8, 16, rng);
  Md b = random_matrix(8, 16, rng);
  const auto r = flashmix::barlow_twins_loss<double>(a, b, 0.005, standardize);
  const auto f = [&] { return flashmix::barlow_twins_loss<double>(a, b, 0.005, standardize).value; };
  return std::max(fd_check(f, a, r.da), fd_check(f, b, r.db));
}

inline double grad_triplet() {
  SplitMix64 rng(112);
  Md q = random_matrix(6, 5, rng);
  Md p = random_matrix(6, 5, rng);
  Md n = q + random_matrix(6, 5, rng, 0.3);  // keeps most triplets active
  const auto r = flashmix::triplet_loss<double>(q, p, n, 0.05);
  const auto f = [&] { return flashmix::triplet_loss<double>(q, p, n, 0.05).value; };
  return std::max({fd_check(f, q, r.da), fd_check(f, p, r.db), fd_check(f, n, r.dc)});
}

inline double grad_ntxent(bool exclude_positive = false) {
  SplitMix64 rng(113);
  Md a = unit_rows(random_matrix(6, 5, rng));
  Md b = unit_rows(random_matrix(6, 5, rng));
  const auto r = flashmix::ntxent_loss<double>(a, b, 0.5, exclude_positive);
  const auto f = [&] { return flashmix::ntxent_loss<double>(a, b, 0.5, exclude_positive).value; };
  return std::max(fd_check(f, a, r.da), fd_check(f, b, r.db));
}

inline double grad_siglip(bool negate_bias = true) {
  SplitMix64 rng(114);
  Md a = unit_rows(random_matrix(5, 4, rng));
  Md b = unit_rows(random_matrix(5, 4, rng));
  Md tb(1, 1);
  tb(0, 0) = std::log(1.0 / 0.07) * 0.3;
  Md bias(1, 1);
  bias(0, 0) = 0.4;
  const auto f = [&] { return flashmix::siglip_loss<double>(a, b, tb(0, 0), bias(0, 0), negate_bias).value; };
  const auto r = flashmix::siglip_loss<double>(a, b, tb(0, 0), bias(0, 0), negate_bias);
  Md dtb(1, 1);
  dtb(0, 0) = r.d_tbar;
  Md db(1, 1);
  db(0, 0) = r.d_bias;
  return std::max({fd_check(f, a, r.da), fd_check(f, b, r.db), fd_check(f, tb, dtb), fd_check(f, bias, db)});
}

/// Mixer, predictor and projector together under the composite loss.
inline double grad_composite(flashmix::RegKind kind) {
  nn::ModelConfig mc;
  mc.mixer.M = 6;
  mc.mixer.d = 8;
  mc.mixer.l = 12;
  mc.trunk_layers = 2;
  nn::RegressorModel<double> model(mc);
  model.init(115);
  SplitMix64 brng(117);
  model.projector.fc1.bias.value = random_matrix(1, model.projector.fc1.bias.value.cols(), brng, 0.5);
  model.projector.fc2.bias.value = random_matrix(1, model.projector.fc2.bias.value.cols(), brng, 0.5);
  flashmix::LossConfig lc;
  lc.reg_kind = kind;
  lc.reg_weight = 0.7;
  lc.tau = 0.5;
  lc.margin = 2.0;
  const Eigen::Index B = 4;
  SplitMix64 rng(116);
  const int views = flashmix::views_per_query(lc);
  const Md F = random_matrix(views * B * mc.mixer.M, mc.mixer.d, rng);
  const Md tg = random_matrix(B, 3, rng, 2.0);
  const Md qg = random_matrix(B, 3, rng, 0.5);
  flashmix::ModelCache<double> cache;
  const auto params = model.parameters();
  const auto run = [&] {
    model.zero_grad();
    return static_cast<double>(flashmix::composite_loss<double>(model, F, B, tg, qg, lc, cache).total);
  };
  return fd_check_params(run, params, 1e-6);
}

// ---------------------------------------------------------------------------
// Farthest point sampling reference.

/// O(N^2 M) max-min search over all candidates with the lowest index
/// winning ties; padding matches the library's documented draw.
inline flashmix::SampleIndices brute_force_fps(const flashmix::PointCloud& cloud, std::size_t m, std::uint64_t seed) {
  const std::size_t n = cloud.size();
  SplitMix64 rng(seed);
  const auto first = static_cast<std::uint32_t>(rng.index(n));
  SplitMix64 pad(rng.next());
  flashmix::SampleIndices picked{first};
  std::vector<bool> taken(n, false);
  taken[first] = true;
  while (picked.size() < std::min(m, n)) {
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      double dmin = std::numeric_limits<double>::infinity();
      for (auto j : picked) dmin = std::min(dmin, (cloud[i] - cloud[j]).squaredNorm());
      if (dmin > best) {
        best = dmin;
        arg = i;
      }
    }
    taken[arg] = true;
    picked.push_back(static_cast<std::uint32_t>(arg));
  }
  const std::size_t base = picked.size();
  while (picked.size() < m) picked.push_back(picked[pad.index(base)]);
  return picked;
}

inline flashmix::PointCloud random_cloud(std::size_t n, SplitMix64& rng, bool with_duplicates = false) {
  std::vector<flashmix::Vec3> pts;
  for (std::size_t i = 0; i < n; ++i) {
    if (with_duplicates && i > 0 && rng.uniform() < 0.2) {
      pts.push_back(pts[rng.index(pts.size())]);
    } else if (with_duplicates) {
      // Integer grid coordinates produce exact distance ties.
      pts.emplace_back(static_cast<double>(rng.index(4)), static_cast<double>(rng.index(4)), 0.0);
    } else {
      pts.emplace_back(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-2, 2));
    }
  }
  return flashmix::PointCloud(std::move(pts));
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("flashmix_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fmtest
