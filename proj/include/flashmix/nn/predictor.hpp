#pragma once

#include <string>
#include <vector>

#include "flashmix/nn/layers.hpp"

namespace flashmix::nn {

struct PredictorConfig {
  int l = 128;
  int trunk_layers = 6;
  int head_hidden = 0;  // 0 -> max(1, l / 2)

  PredictorConfig resolved() const {
    PredictorConfig c = *this;
    if (c.head_hidden <= 0) c.head_hidden = std::max(1, l / 2);
    return c;
  }
};

/// Linear -> BatchNorm -> ReLU.
template <class T>
struct DenseBlock {
  Linear<T> fc;
  BatchNorm<T> bn;

  struct Cache {
    Matrix<T> x;
    typename BatchNorm<T>::Cache bn;
    Matrix<T> y;  // post-ReLU
  };

  DenseBlock() = default;
  DenseBlock(const std::string& name, Eigen::Index in, Eigen::Index out) : fc(name + ".fc", in, out), bn(name + ".bn", out) {}

  void init(SplitMix64& rng) {
    fc.init(rng);
    bn.init();
  }

  Matrix<T> forward(const Matrix<T>& x, Cache& c, bool training) {
    c.x = x;
    c.y = relu(bn.forward(fc.forward(x), c.bn, training));
    return c.y;
  }

  Matrix<T> backward(const Cache& c, const Matrix<T>& dy) {
    return fc.backward(c.x, bn.backward(c.bn, relu_backward(c.y, dy)));
  }

  void collect(std::vector<Parameter<T>*>& out) {
    fc.collect(out);
    bn.collect(out);
  }
};

/// Trunk of dense blocks followed by separate translation and rotation heads
/// (dense block + linear to 3 each). The rotation head regresses the
/// log-quaternion.
template <class T>
struct PosePredictor {
  PredictorConfig config;
  std::vector<DenseBlock<T>> trunk;
  DenseBlock<T> t_hidden;
  Linear<T> t_out;
  DenseBlock<T> q_hidden;
  Linear<T> q_out;

  struct Cache {
    std::vector<typename DenseBlock<T>::Cache> trunk;
    typename DenseBlock<T>::Cache t_hidden;
    typename DenseBlock<T>::Cache q_hidden;
  };

  struct Output {
    Matrix<T> t;  // B x 3
    Matrix<T> q;  // B x 3
  };

  PosePredictor() = default;
  explicit PosePredictor(const PredictorConfig& cfg)
      : config(cfg.resolved()),
        t_hidden("predictor.t_head.hidden", config.l, config.head_hidden),
        t_out("predictor.t_head.out", config.head_hidden, 3),
        q_hidden("predictor.q_head.hidden", config.l, config.head_hidden),
        q_out("predictor.q_head.out", config.head_hidden, 3) {
    for (int i = 0; i < config.trunk_layers; ++i) {
      trunk.emplace_back("predictor.trunk" + std::to_string(i), config.l, config.l);
    }
  }

  void init(SplitMix64& rng) {
    for (auto& b : trunk) b.init(rng);
    t_hidden.init(rng);
    t_out.init(rng);
    q_hidden.init(rng);
    q_out.init(rng);
  }

  Output forward(const Matrix<T>& g, Cache& cache, bool training) {
    check_cols(g.cols(), config.l, "predictor input");
    cache.trunk.resize(trunk.size());
    Matrix<T> x = g;
    for (std::size_t i = 0; i < trunk.size(); ++i) x = trunk[i].forward(x, cache.trunk[i], training);
    Output out;
    out.t = t_out.forward(t_hidden.forward(x, cache.t_hidden, training));
    out.q = q_out.forward(q_hidden.forward(x, cache.q_hidden, training));
    return out;
  }

  Matrix<T> backward(const Cache& cache, const Matrix<T>& d_t, const Matrix<T>& d_q) {
    Matrix<T> dx = t_hidden.backward(cache.t_hidden, t_out.backward(cache.t_hidden.y, d_t));
    dx += q_hidden.backward(cache.q_hidden, q_out.backward(cache.q_hidden.y, d_q));
    for (std::size_t i = trunk.size(); i-- > 0;) dx = trunk[i].backward(cache.trunk[i], dx);
    return dx;
  }

  void collect(std::vector<Parameter<T>*>& out) {
    for (auto& b : trunk) b.collect(out);
    t_hidden.collect(out);
    t_out.collect(out);
    q_hidden.collect(out);
    q_out.collect(out);
  }

  void collect_state(std::vector<Parameter<T>*>& out) {
    for (auto& b : trunk) b.bn.collect_state(out);
    t_hidden.bn.collect_state(out);
    q_hidden.bn.collect_state(out);
  }
};

// ---------------------------------------------------------------------------

struct ProjectorConfig {
  int l = 128;
  int hidden = 0;  // 0 -> l
  int out = 0;     // 0 -> max(8, l / 2)

  ProjectorConfig resolved() const {
    ProjectorConfig c = *this;
    if (c.hidden <= 0) c.hidden = l;
    if (c.out <= 0) c.out = std::max(8, l / 2);
    return c;
  }
};

inline constexpr double kNormEps = 1e-12;

/// Linear -> ReLU -> Linear, then L2-normalized rows.
template <class T>
struct Projector {
  ProjectorConfig config;
  Linear<T> fc1;
  Linear<T> fc2;

  struct Cache {
    Matrix<T> x;
    Matrix<T> h;  // post-ReLU
    Matrix<T> z;  // pre-normalization
    ColVector<T> norms;
    Matrix<T> y;
    Eigen::Index zero_rows = 0;  // rows whose norm fell below kNormEps
  };

  Projector() = default;
  explicit Projector(const ProjectorConfig& cfg)
      : config(cfg.resolved()),
        fc1("projector.fc1", config.l, config.hidden),
        fc2("projector.fc2", config.hidden, config.out) {}

  void init(SplitMix64& rng) {
    fc1.init(rng);
    fc2.init(rng);
  }

  Matrix<T> forward(const Matrix<T>& g, Cache& c) const {
    c.x = g;
    c.h = relu(fc1.forward(g));
    c.z = fc2.forward(c.h);
    c.norms = c.z.rowwise().norm();
    c.zero_rows = (c.norms.array() < T(kNormEps)).count();
    c.y = c.z.array().colwise() / (c.norms.array() + T(kNormEps));
    return c.y;
  }

  Matrix<T> backward(const Cache& c, const Matrix<T>& dy) {
    // y = z / (s + eps), s = |z|:  dz = dy / n - z (z . dy) / (n^2 s)
    const ColVector<T> n = c.norms.array() + T(kNormEps);
    const ColVector<T> zdy = (c.z.array() * dy.array()).rowwise().sum();
    ColVector<T> coef(n.size());
    for (Eigen::Index i = 0; i < n.size(); ++i) {
      coef[i] = c.norms[i] > T(0) ? zdy[i] / (n[i] * n[i] * c.norms[i]) : T(0);
    }
    Matrix<T> dz = dy.array().colwise() / n.array();
    dz.array() -= c.z.array().colwise() * coef.array();
    // Rows flagged as zero vectors pass no gradient.
    for (Eigen::Index i = 0; i < n.size(); ++i) {
      if (c.norms[i] < T(kNormEps)) dz.row(i).setZero();
    }
    return fc1.backward(c.x, relu_backward(c.h, fc2.backward(c.h, dz)));
  }

  void collect(std::vector<Parameter<T>*>& out) {
    fc1.collect(out);
    fc2.collect(out);
  }
};

}  // namespace flashmix::nn
