#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "flashmix/error.hpp"
#include "flashmix/nn/layers.hpp"

namespace flashmix {

enum class RegKind { None, Barlow, Triplet, NTXent, SigLIP };

inline std::string to_string(RegKind k) {
  switch (k) {
    case RegKind::None: return "none";
    case RegKind::Barlow: return "barlow";
    case RegKind::Triplet: return "triplet";
    case RegKind::NTXent: return "ntxent";
    case RegKind::SigLIP: return "siglip";
  }
  return "none";
}

inline RegKind parse_reg_kind(const std::string& s) {
  for (auto k : {RegKind::None, RegKind::Barlow, RegKind::Triplet, RegKind::NTXent, RegKind::SigLIP}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown regularizer '" + s + "' (none|barlow|triplet|ntxent|siglip)");
}

struct LossConfig {
  double alpha = 1.0;
  double mu = 0.005;
  double margin = 0.05;
  double tau = 0.07;
  RegKind reg_kind = RegKind::None;
  double reg_weight = 1.0;
  bool barlow_standardize = false;  // mean-center columns before correlating
  bool ntxent_exclude_positive = false;  // denominator over k != i only
  bool siglip_negate_bias = true;  // bias enters as z (t s - b)

  void validate() const {
    if (alpha < 0 || mu < 0 || margin < 0 || tau <= 0 || reg_weight < 0) {
      throw std::invalid_argument("loss weights must be non-negative and tau positive");
    }
  }

  /// True when the regularizer contributes to the parameter update.
  bool reg_active() const { return reg_kind != RegKind::None && reg_weight > 0.0; }
};

template <class T>
using Mat = nn::Matrix<T>;

/// Loss value and gradients w.r.t. up to three inputs.
template <class T>
struct LossResult {
  T value = T(0);
  Mat<T> da;
  Mat<T> db;
  Mat<T> dc;
};

namespace detail {

template <class T>
T sign0(T x) {
  return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
}

/// log(1 + exp(x)) without overflow.
template <class T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <class T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

/// Batch mean of |t - t_gt|_1 + alpha |q - q_gt|_1; rows are samples.
/// da is the gradient w.r.t. t_pred, db w.r.t. q_pred.
template <class T>
LossResult<T> pose_loss(const Mat<T>& t_pred, const Mat<T>& q_pred, const Mat<T>& t_gt, const Mat<T>& q_gt,
                        double alpha) {
  nn::check_shape(t_pred.rows(), t_pred.cols(), t_gt.rows(), 3, "pose loss translation");
  nn::check_shape(q_pred.rows(), q_pred.cols(), q_gt.rows(), 3, "pose loss rotation");
  nn::check_shape(t_gt.rows(), t_gt.cols(), q_gt.rows(), 3, "pose loss targets");
  const auto B = t_pred.rows();
  LossResult<T> r;
  if (B == 0) return r;
  const T a = static_cast<T>(alpha);
  const T inv_b = T(1) / static_cast<T>(B);
  const Mat<T> dt = t_pred - t_gt;
  const Mat<T> dq = q_pred - q_gt;
  r.value = (dt.cwiseAbs().sum() + a * dq.cwiseAbs().sum()) * inv_b;
  r.da = dt.unaryExpr([](T x) { return detail::sign0(x); }) * inv_b;
  r.db = dq.unaryExpr([](T x) { return detail::sign0(x); }) * (a * inv_b);
  return r;
}

/// Cross-correlation of column-normalized embeddings:
///   C_ij = sum_b Lq[b,i] Lp[b,j] / (|Lq[:,i]| |Lp[:,j]|)
///   L = sum_i (1 - C_ii)^2 + mu sum_{i != j} C_ij^2
template <class T>
LossResult<T> barlow_twins_loss(const Mat<T>& Lq_in, const Mat<T>& Lp_in, double mu, bool standardize = false) {
  nn::check_shape(Lp_in.rows(), Lp_in.cols(), Lq_in.rows(), Lq_in.cols(), "barlow twins inputs");
  if (Lq_in.rows() < 2) throw DegenerateBatch("Barlow Twins needs a batch of at least 2");
  constexpr T eps = T(1e-12);
  const T m = static_cast<T>(mu);

  Mat<T> A = Lq_in;
  Mat<T> P = Lp_in;
  if (standardize) {
    A.rowwise() -= A.colwise().mean();
    P.rowwise() -= P.colwise().mean();
  }
  const nn::RowVector<T> na = A.colwise().norm();
  const nn::RowVector<T> np = P.colwise().norm();
  const nn::RowVector<T> da = na.array() + eps;
  const nn::RowVector<T> dp = np.array() + eps;
  const Mat<T> denom = da.transpose() * dp;
  const Mat<T> C = (A.transpose() * P).array() / denom.array();

  const auto p = C.rows();
  Mat<T> G = (T(2) * m) * C;  // dL/dC
  LossResult<T> r;
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) {
      if (i == j) {
        r.value += (T(1) - C(i, i)) * (T(1) - C(i, i));
        G(i, i) = T(-2) * (T(1) - C(i, i));
      } else {
        r.value += m * C(i, j) * C(i, j);
      }
    }
  }
  const Mat<T> Gs = G.array() / denom.array();
  const Mat<T> GC = G.cwiseProduct(C);
  const nn::RowVector<T> row_gc = GC.rowwise().sum().transpose();  // over j, per i
  const nn::RowVector<T> col_gc = GC.colwise().sum();              // over i, per j

  nn::RowVector<T> sa(p);
  nn::RowVector<T> sp(p);
  for (Eigen::Index i = 0; i < p; ++i) {
    sa[i] = na[i] > T(0) ? row_gc[i] / (da[i] * na[i]) : T(0);
    sp[i] = np[i] > T(0) ? col_gc[i] / (dp[i] * np[i]) : T(0);
  }
  r.da = P * Gs.transpose();
  r.da.array() -= A.array().rowwise() * sa.array();
  r.db = A * Gs;
  r.db.array() -= P.array().rowwise() * sp.array();
  if (standardize) {
    r.da.rowwise() -= r.da.colwise().mean();
    r.db.rowwise() -= r.db.colwise().mean();
  }
  return r;
}

/// Batch mean of max(|q - p|^2 - |q - n|^2 + margin, 0).
template <class T>
LossResult<T> triplet_loss(const Mat<T>& lq, const Mat<T>& lp, const Mat<T>& ln, double margin) {
  nn::check_shape(lp.rows(), lp.cols(), lq.rows(), lq.cols(), "triplet positive");
  nn::check_shape(ln.rows(), ln.cols(), lq.rows(), lq.cols(), "triplet negative");
  const auto B = lq.rows();
  LossResult<T> r;
  r.da = Mat<T>::Zero(B, lq.cols());
  r.db = Mat<T>::Zero(B, lq.cols());
  r.dc = Mat<T>::Zero(B, lq.cols());
  if (B == 0) return r;
  const T inv_b = T(1) / static_cast<T>(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto qp = lq.row(b) - lp.row(b);
    const auto qn = lq.row(b) - ln.row(b);
    const T h = qp.squaredNorm() - qn.squaredNorm() + static_cast<T>(margin);
    if (h > T(0)) {
      r.value += h;
      r.da.row(b) = T(2) * (ln.row(b) - lp.row(b)) * inv_b;
      r.db.row(b) = T(-2) * qp * inv_b;
      r.dc.row(b) = T(2) * qn * inv_b;
    }
  }
  r.value *= inv_b;
  return r;
}

/// Per-row InfoNCE over similarities Lq Lp^T / tau, summed over rows.
/// `exclude_positive` drops k = i from each row's denominator.
template <class T>
LossResult<T> ntxent_loss(const Mat<T>& Lq, const Mat<T>& Lp, double tau, bool exclude_positive = false,
                          nn::ColVector<T>* per_row = nullptr) {
  nn::check_shape(Lp.rows(), Lp.cols(), Lq.rows(), Lq.cols(), "ntxent inputs");
  const auto B = Lq.rows();
  if (B < 2) throw DegenerateBatch("NTXent needs a batch of at least 2");
  const T inv_tau = T(1) / static_cast<T>(tau);
  const Mat<T> S = (Lq * Lp.transpose()) * inv_tau;
  Mat<T> dS = Mat<T>::Zero(B, B);
  LossResult<T> r;
  if (per_row) per_row->resize(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (Eigen::Index k = 0; k < B; ++k) {
      if (!(exclude_positive && k == i)) mx = std::max(mx, S(i, k));
    }
    T sum = T(0);
    for (Eigen::Index k = 0; k < B; ++k) {
      if (!(exclude_positive && k == i)) sum += std::exp(S(i, k) - mx);
    }
    const T lse = mx + std::log(sum);
    const T li = lse - S(i, i);
    r.value += li;
    if (per_row) (*per_row)[i] = li;
    for (Eigen::Index k = 0; k < B; ++k) {
      if (!(exclude_positive && k == i)) dS(i, k) = std::exp(S(i, k) - lse);
    }
    dS(i, i) -= T(1);
  }
  r.da = (dS * Lp) * inv_tau;
  r.db = (dS.transpose() * Lq) * inv_tau;
  return r;
}

/// Pairwise sigmoid loss, (1/B) sum_ij softplus(-u_ij) with
///   u_ij = z_ij (t <lq_i, lp_j> - b)   (negate_bias, the default)
///   u_ij = z_ij (t <lq_i, lp_j> + b)   (otherwise)
/// where t = exp(tbar) and z_ij = +1 on the diagonal, -1 off it.
template <class T>
struct SiglipResult : LossResult<T> {
  T d_tbar = T(0);
  T d_bias = T(0);
};

template <class T>
SiglipResult<T> siglip_loss(const Mat<T>& Lq, const Mat<T>& Lp, T tbar, T bias, bool negate_bias = true) {
  nn::check_shape(Lp.rows(), Lp.cols(), Lq.rows(), Lq.cols(), "siglip inputs");
  const auto B = Lq.rows();
  if (B < 1) throw DegenerateBatch("SigLIP needs a non-empty batch");
  const T t = std::exp(tbar);
  const T bs = negate_bias ? T(-1) : T(1);
  const T inv_b = T(1) / static_cast<T>(B);
  const Mat<T> S = Lq * Lp.transpose();
  Mat<T> dS(B, B);
  SiglipResult<T> r;
  for (Eigen::Index i = 0; i < B; ++i) {
    for (Eigen::Index j = 0; j < B; ++j) {
      const T z = i == j ? T(1) : T(-1);
      const T u = z * (t * S(i, j) + bs * bias);
      r.value += detail::softplus(-u);
      const T du = -detail::sigmoid(-u) * inv_b;
      dS(i, j) = du * z * t;
      r.d_tbar += du * z * t * S(i, j);
      r.d_bias += du * z * bs;
    }
  }
  r.value *= inv_b;
  r.da = dS * Lp;
  r.db = dS.transpose() * Lq;
  return r;
}

}  // namespace flashmix
