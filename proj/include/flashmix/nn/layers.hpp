#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "flashmix/error.hpp"
#include "flashmix/rng.hpp"

namespace flashmix::nn {

/// Row-major dense matrix. Batched activations are stacked along rows: a
/// batch of B point sets of shape M x d is a (B*M) x d matrix.
template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <class T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Named tensor with gradient storage.
template <class T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix<T>::Zero(rows, cols)), grad(Matrix<T>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

inline void check_shape(Eigen::Index got_rows, Eigen::Index got_cols, Eigen::Index rows, Eigen::Index cols,
                        const std::string& what) {
  if (got_rows != rows || got_cols != cols) {
    throw ShapeMismatch(what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                        std::to_string(got_rows) + "x" + std::to_string(got_cols));
  }
}

inline void check_cols(Eigen::Index got, Eigen::Index want, const std::string& what) {
  if (got != want) {
    throw ShapeMismatch(what + ": expected " + std::to_string(want) + " columns, got " + std::to_string(got));
  }
}

// ---------------------------------------------------------------------------

/// y = x W + b with W stored in x out.
template <class T>
struct Linear {
  Parameter<T> weight;
  Parameter<T> bias;

  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out)
      : weight(name + ".weight", in, out), bias(name + ".bias", 1, out) {}

  Eigen::Index in_features() const { return weight.value.rows(); }
  Eigen::Index out_features() const { return weight.value.cols(); }

  /// Kaiming-uniform (fan-in, ReLU gain) weights, zero bias.
  void init(SplitMix64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in_features()));
    for (Eigen::Index i = 0; i < weight.value.size(); ++i) {
      weight.value.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
    }
    bias.value.setZero();
  }

  Matrix<T> forward(const Matrix<T>& x) const {
    check_cols(x.cols(), in_features(), weight.name);
    Matrix<T> y(x.rows(), out_features());
    y.noalias() = x * weight.value;
    y.rowwise() += bias.value.row(0);
    return y;
  }

  /// Accumulates parameter gradients and returns dL/dx.
  Matrix<T> backward(const Matrix<T>& x, const Matrix<T>& dy) {
    weight.grad.noalias() += x.transpose() * dy;
    bias.grad.row(0) += dy.colwise().sum();
    Matrix<T> dx(dy.rows(), in_features());
    dx.noalias() = dy * weight.value.transpose();
    return dx;
  }

  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

// ---------------------------------------------------------------------------

/// Normalizes each row over its columns.
template <class T>
struct LayerNorm {
  Parameter<T> gamma;
  Parameter<T> beta;
  T eps = T(1e-5);

  struct Cache {
    Matrix<T> xhat;
    ColVector<T> inv_std;
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, Eigen::Index dim) : gamma(name + ".gamma", 1, dim), beta(name + ".beta", 1, dim) {
    init();
  }

  void init() {
    gamma.value.setOnes();
    beta.value.setZero();
  }

  Matrix<T> forward(const Matrix<T>& x, Cache& cache) const {
    check_cols(x.cols(), gamma.value.cols(), gamma.name);
    const auto n = static_cast<T>(x.cols());
    const ColVector<T> mean = x.rowwise().sum() / n;
    cache.xhat = x.colwise() - mean;
    const ColVector<T> var = cache.xhat.array().square().rowwise().sum() / n;
    cache.inv_std = (var.array() + eps).rsqrt();
    cache.xhat.array().colwise() *= cache.inv_std.array();
    Matrix<T> y = cache.xhat.array().rowwise() * gamma.value.row(0).array();
    y.rowwise() += beta.value.row(0);
    return y;
  }

  Matrix<T> backward(const Cache& cache, const Matrix<T>& dy) {
    gamma.grad.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    beta.grad.row(0) += dy.colwise().sum();
    const auto n = static_cast<T>(dy.cols());
    Matrix<T> dxhat = dy.array().rowwise() * gamma.value.row(0).array();
    const ColVector<T> s1 = dxhat.rowwise().sum();
    const ColVector<T> s2 = (dxhat.array() * cache.xhat.array()).rowwise().sum();
    // dx = inv_std / n * (n * dxhat - s1 - xhat * s2)
    Matrix<T> dx = (dxhat.array() * n).colwise() - s1.array();
    dx.array() -= cache.xhat.array().colwise() * s2.array();
    dx.array().colwise() *= cache.inv_std.array() / n;
    return dx;
  }

  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

// ---------------------------------------------------------------------------

/// Normalizes each column over the batch (rows). Training mode uses batch
/// statistics and updates the running estimates; eval mode uses the running
/// estimates.
template <class T>
struct BatchNorm {
  Parameter<T> gamma;
  Parameter<T> beta;
  Parameter<T> running_mean;  // not trained; grad unused
  Parameter<T> running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  struct Cache {
    Matrix<T> xhat;
    RowVector<T> inv_std;
  };

  BatchNorm() = default;
  BatchNorm(const std::string& name, Eigen::Index dim)
      : gamma(name + ".gamma", 1, dim),
        beta(name + ".beta", 1, dim),
        running_mean(name + ".running_mean", 1, dim),
        running_var(name + ".running_var", 1, dim) {
    init();
  }

  void init() {
    gamma.value.setOnes();
    beta.value.setZero();
    running_mean.value.setZero();
    running_var.value.setOnes();
  }

  Matrix<T> forward(const Matrix<T>& x, Cache& cache, bool training) {
    check_cols(x.cols(), gamma.value.cols(), gamma.name);
    RowVector<T> mean;
    RowVector<T> var;
    if (training) {
      const auto n = static_cast<T>(x.rows());
      mean = x.colwise().sum() / n;
      var = (x.rowwise() - mean).array().square().colwise().sum() / n;
      const T unbiased = x.rows() > 1 ? n / (n - T(1)) : T(1);
      running_mean.value.row(0) = (T(1) - momentum) * running_mean.value.row(0) + momentum * mean;
      running_var.value.row(0) = (T(1) - momentum) * running_var.value.row(0) + momentum * unbiased * var;
    } else {
      mean = running_mean.value.row(0);
      var = running_var.value.row(0);
    }
    cache.inv_std = (var.array() + eps).rsqrt();
    cache.xhat = (x.rowwise() - mean).array().rowwise() * cache.inv_std.array();
    Matrix<T> y = cache.xhat.array().rowwise() * gamma.value.row(0).array();
    y.rowwise() += beta.value.row(0);
    return y;
  }

  /// Gradient of the training-mode forward.
  Matrix<T> backward(const Cache& cache, const Matrix<T>& dy) {
    gamma.grad.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    beta.grad.row(0) += dy.colwise().sum();
    const auto n = static_cast<T>(dy.rows());
    Matrix<T> dxhat = dy.array().rowwise() * gamma.value.row(0).array();
    const RowVector<T> s1 = dxhat.colwise().sum();
    const RowVector<T> s2 = (dxhat.array() * cache.xhat.array()).colwise().sum();
    Matrix<T> dx = (dxhat.array() * n).rowwise() - s1.array();
    dx.array() -= cache.xhat.array().rowwise() * s2.array();
    dx.array().rowwise() *= cache.inv_std.array() / n;
    return dx;
  }

  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }

  void collect_state(std::vector<Parameter<T>*>& out) {
    out.push_back(&running_mean);
    out.push_back(&running_var);
  }
};

// ---------------------------------------------------------------------------
// Elementwise activations. Backward functions take the forward input (GELU)
// or output (ReLU, tanh).

/// tanh-form GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <class T>
Matrix<T> gelu(const Matrix<T>& x) {
  const T k = T(std::sqrt(2.0 / std::numbers::pi));
  const auto inner = (k * (x.array() + T(0.044715) * x.array().cube())).tanh();
  return (T(0.5) * x.array() * (T(1) + inner)).matrix();
}

template <class T>
Matrix<T> gelu_backward(const Matrix<T>& x, const Matrix<T>& dy) {
  const T k = T(std::sqrt(2.0 / std::numbers::pi));
  const auto xa = x.array();
  const Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> th =
      (k * (xa + T(0.044715) * xa.cube())).tanh();
  const auto dinner = k * (T(1) + T(3 * 0.044715) * xa.square());
  return (dy.array() * (T(0.5) * (T(1) + th) + T(0.5) * xa * (T(1) - th.square()) * dinner)).matrix();
}

template <class T>
Matrix<T> relu(const Matrix<T>& x) {
  return x.cwiseMax(T(0));
}

template <class T>
Matrix<T> relu_backward(const Matrix<T>& y, const Matrix<T>& dy) {
  return (y.array() > T(0)).select(dy, T(0));
}

template <class T>
Matrix<T> tanh(const Matrix<T>& x) {
  return x.array().tanh().matrix();
}

template <class T>
Matrix<T> tanh_backward(const Matrix<T>& y, const Matrix<T>& dy) {
  return (dy.array() * (T(1) - y.array().square())).matrix();
}

}  // namespace flashmix::nn
