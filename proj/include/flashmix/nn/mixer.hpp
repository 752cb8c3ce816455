#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "flashmix/nn/layers.hpp"

namespace flashmix::nn {

struct MixerConfig {
  int M = 512;
  int d = 32;
  int l = 128;
  int layers = 1;           // 0 gives the MLP+GAP aggregator
  int hidden_points = 0;    // 0 -> max(1, M / 2)
  int hidden_features = 0;  // 0 -> 2 d
  bool residual = true;

  MixerConfig resolved() const {
    MixerConfig c = *this;
    if (c.hidden_points <= 0) c.hidden_points = std::max(1, M / 2);
    if (c.hidden_features <= 0) c.hidden_features = 2 * d;
    return c;
  }

  bool operator==(const MixerConfig&) const = default;
};

/// One Mixer layer: point mixing across the M axis, then feature mixing
/// across the d axis. Both normalize each point's d-vector first.
template <class T>
struct MixerBlock {
  LayerNorm<T> point_norm;
  Linear<T> point_fc1;
  Linear<T> point_fc2;
  LayerNorm<T> feature_norm;
  Linear<T> feature_fc1;
  Linear<T> feature_fc2;

  MixerBlock() = default;
  MixerBlock(const std::string& name, const MixerConfig& c)
      : point_norm(name + ".point_norm", c.d),
        point_fc1(name + ".point_fc1", c.M, c.hidden_points),
        point_fc2(name + ".point_fc2", c.hidden_points, c.M),
        feature_norm(name + ".feature_norm", c.d),
        feature_fc1(name + ".feature_fc1", c.d, c.hidden_features),
        feature_fc2(name + ".feature_fc2", c.hidden_features, c.d) {}

  void collect(std::vector<Parameter<T>*>& out) {
    point_norm.collect(out);
    point_fc1.collect(out);
    point_fc2.collect(out);
    feature_norm.collect(out);
    feature_fc1.collect(out);
    feature_fc2.collect(out);
  }
};

/// Mixer layers, a d -> l projection with ReLU, and global average pooling
/// over the M points.
template <class T>
struct MixerAggregator {
  MixerConfig config;
  std::vector<MixerBlock<T>> blocks;
  Linear<T> proj;

  MixerAggregator() = default;
  explicit MixerAggregator(const MixerConfig& cfg) : config(cfg.resolved()), proj("mixer.proj", config.d, config.l) {
    for (int i = 0; i < config.layers; ++i) {
      blocks.emplace_back("mixer.block" + std::to_string(i), config);
    }
  }

  void init(SplitMix64& rng) {
    for (auto& b : blocks) {
      b.point_norm.init();
      b.point_fc1.init(rng);
      b.point_fc2.init(rng);
      b.feature_norm.init();
      b.feature_fc1.init(rng);
      b.feature_fc2.init(rng);
    }
    proj.init(rng);
  }

  void collect(std::vector<Parameter<T>*>& out) {
    for (auto& b : blocks) b.collect(out);
    proj.collect(out);
  }
};

template <class T>
struct MixerBlockCache {
  typename LayerNorm<T>::Cache point_norm;
  Matrix<T> tokens;  // normalized input transposed per sample, (B*d) x M
  Matrix<T> point_h;  // pre-GELU, (B*d) x Hp
  Matrix<T> point_g;
  Matrix<T> mid;  // after point mixing, (B*M) x d
  typename LayerNorm<T>::Cache feature_norm;
  Matrix<T> feature_in;  // normalized mid
  Matrix<T> feature_h;   // pre-GELU, (B*M) x Hf
  Matrix<T> feature_g;
};

template <class T>
struct MixerCache {
  Eigen::Index batch = 0;
  std::vector<MixerBlockCache<T>> blocks;
  Matrix<T> proj_in;   // (B*M) x d
  Matrix<T> proj_out;  // post-ReLU, (B*M) x l
};

namespace detail {

/// (B*rows) x cols  ->  (B*cols) x rows, transposing each sample block.
template <class T>
Matrix<T> transpose_blocks(const Matrix<T>& x, Eigen::Index batch, Eigen::Index rows) {
  const Eigen::Index cols = x.cols();
  Matrix<T> out(batch * cols, rows);
  for (Eigen::Index b = 0; b < batch; ++b) {
    out.middleRows(b * cols, cols) = x.middleRows(b * rows, rows).transpose();
  }
  return out;
}

}  // namespace detail

/// Forward pass on a batch of point sets stacked as (B*M) x d; returns the
/// B x l global descriptors.
template <class T>
Matrix<T> mixer_forward(const MixerAggregator<T>& model, const Matrix<T>& F, MixerCache<T>& cache) {
  const auto& c = model.config;
  check_cols(F.cols(), c.d, "mixer input");
  if (F.rows() == 0 || F.rows() % c.M != 0) {
    throw ShapeMismatch("mixer input rows must be a positive multiple of M = " + std::to_string(c.M));
  }
  const Eigen::Index B = F.rows() / c.M;
  cache.batch = B;
  cache.blocks.resize(model.blocks.size());

  Matrix<T> x = F;
  for (std::size_t k = 0; k < model.blocks.size(); ++k) {
    const auto& blk = model.blocks[k];
    auto& bc = cache.blocks[k];
    const Matrix<T> normed = blk.point_norm.forward(x, bc.point_norm);
    bc.tokens = detail::transpose_blocks(normed, B, c.M);
    bc.point_h = blk.point_fc1.forward(bc.tokens);
    bc.point_g = gelu(bc.point_h);
    const Matrix<T> mixed = detail::transpose_blocks(blk.point_fc2.forward(bc.point_g), B, c.d);
    bc.mid = c.residual ? Matrix<T>(x + mixed) : mixed;

    bc.feature_in = blk.feature_norm.forward(bc.mid, bc.feature_norm);
    bc.feature_h = blk.feature_fc1.forward(bc.feature_in);
    bc.feature_g = gelu(bc.feature_h);
    const Matrix<T> fmixed = blk.feature_fc2.forward(bc.feature_g);
    x = c.residual ? Matrix<T>(bc.mid + fmixed) : fmixed;
  }
  cache.proj_in = std::move(x);
  cache.proj_out = relu(model.proj.forward(cache.proj_in));

  Matrix<T> out(B, c.l);
  for (Eigen::Index b = 0; b < B; ++b) {
    out.row(b) = cache.proj_out.middleRows(b * c.M, c.M).colwise().mean();
  }
  return out;
}

/// Backward pass; accumulates parameter gradients into `model` and returns
/// dL/dF.
template <class T>
Matrix<T> mixer_backward(MixerAggregator<T>& model, const MixerCache<T>& cache, const Matrix<T>& d_out) {
  const auto& c = model.config;
  const Eigen::Index B = cache.batch;
  check_shape(d_out.rows(), d_out.cols(), B, c.l, "mixer output gradient");

  // Average pooling sends d_out / M to every point of its sample.
  Matrix<T> d_proj(B * c.M, c.l);
  for (Eigen::Index b = 0; b < B; ++b) {
    d_proj.middleRows(b * c.M, c.M).rowwise() = d_out.row(b) / static_cast<T>(c.M);
  }
  d_proj = relu_backward(cache.proj_out, d_proj);
  Matrix<T> dx = model.proj.backward(cache.proj_in, d_proj);

  for (std::size_t k = model.blocks.size(); k-- > 0;) {
    auto& blk = model.blocks[k];
    const auto& bc = cache.blocks[k];

    // Feature mixing.
    Matrix<T> d_g = blk.feature_fc2.backward(bc.feature_g, dx);
    Matrix<T> d_h = gelu_backward(bc.feature_h, d_g);
    Matrix<T> d_in = blk.feature_fc1.backward(bc.feature_in, d_h);
    Matrix<T> d_mid = blk.feature_norm.backward(bc.feature_norm, d_in);
    if (c.residual) d_mid += dx;

    // Point mixing.
    const Matrix<T> d_mixed_t = detail::transpose_blocks(d_mid, B, c.M);
    d_g = blk.point_fc2.backward(bc.point_g, d_mixed_t);
    d_h = gelu_backward(bc.point_h, d_g);
    const Matrix<T> d_tokens = blk.point_fc1.backward(bc.tokens, d_h);
    Matrix<T> d_x = blk.point_norm.backward(bc.point_norm, detail::transpose_blocks(d_tokens, B, c.d));
    if (c.residual) d_x += d_mid;
    dx = std::move(d_x);
  }
  return dx;
}

}  // namespace flashmix::nn
