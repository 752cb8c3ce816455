#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "flashmix/nn/layers.hpp"

namespace flashmix {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed list of parameters.
template <class T>
class Adam {
 public:
  Adam(std::vector<nn::Parameter<T>*> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.push_back(nn::Matrix<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(nn::Matrix<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step(double lr) {
    ++t_;
    const T b1 = static_cast<T>(cfg_.beta1);
    const T b2 = static_cast<T>(cfg_.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
    const T eps = static_cast<T>(cfg_.eps);
    const T rate = static_cast<T>(lr);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      nn::check_shape(p.grad.rows(), p.grad.cols(), p.value.rows(), p.value.cols(), p.name + " gradient");
      nn::check_shape(m_[i].rows(), m_[i].cols(), p.value.rows(), p.value.cols(), p.name + " moments");
      m_[i] = b1 * m_[i] + (T(1) - b1) * p.grad;
      v_[i] = b2 * v_[i] + (T(1) - b2) * p.grad.cwiseAbs2();
      p.value.array() -= rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
  }

  std::uint64_t steps() const { return t_; }
  const nn::Matrix<T>& first_moment(std::size_t i) const { return m_[i]; }
  const nn::Matrix<T>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<nn::Parameter<T>*> params_;
  AdamConfig cfg_;
  std::vector<nn::Matrix<T>> m_;
  std::vector<nn::Matrix<T>> v_;
  std::uint64_t t_ = 0;
};

/// Linear warmup from lr_init / 25 to lr_init, then cosine decay to
/// lr_final at total_steps.
struct OneCycleSchedule {
  double lr_init = 0.01;
  double lr_final = 1e-6;
  std::int64_t total_steps = 1;
  double warmup_frac = 0.1;
  double div_factor = 25.0;

  std::int64_t warmup_steps() const {
    if (total_steps <= 0) return 0;
    const auto w = static_cast<std::int64_t>(std::llround(warmup_frac * static_cast<double>(total_steps)));
    return std::clamp<std::int64_t>(w, 1, total_steps);
  }

  double lr_start() const { return lr_init / div_factor; }

  double lr_at(double step) const {
    const auto w = static_cast<double>(warmup_steps());
    const auto total = static_cast<double>(total_steps);
    step = std::clamp(step, 0.0, std::max(total, 0.0));
    if (step < w) {
      const double f = step / w;
      return lr_start() * (1.0 - f) + lr_init * f;
    }
    if (total <= w) return lr_init;
    const double p = (step - w) / (total - w);
    const double c = 0.5 * (1.0 + std::cos(std::numbers::pi * p));
    return lr_init * c + lr_final * (1.0 - c);
  }
};

inline double lr_at(const OneCycleSchedule& s, double step) { return s.lr_at(step); }

}  // namespace flashmix
