#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "flashmix/buffer.hpp"
#include "flashmix/dataset.hpp"
#include "flashmix/encoder.hpp"
#include "flashmix/error.hpp"
#include "flashmix/geometry.hpp"
#include "flashmix/losses.hpp"
#include "flashmix/nn/model.hpp"
#include "flashmix/optim.hpp"
#include "flashmix/rng.hpp"

namespace flashmix {

struct TrainConfig {
  nn::ModelConfig model{};
  LossConfig loss{};
  MiningConfig mining{};
  int epochs = 30;
  int batch = 256;
  double lr_init = 0.01;
  double lr_final = 1e-6;
  double warmup_frac = 0.1;
  std::uint64_t seed = 1;
  int ema_window = 50;
  bool init_translation_bias = true;  // start the translation head at the mean position
};

struct StepLog {
  std::int64_t step = 0;
  double loss_pose = 0;
  double loss_reg = 0;
  double loss_total = 0;
  double lr = 0;
  double wall_ms = 0;
};

struct EpochLog {
  int epoch = 0;  // 1-based
  double loss_pose = 0;  // means over the epoch's steps
  double loss_reg = 0;
  double loss_total = 0;
  double ema_total = 0;  // smoothed total at the end of the epoch
  double wall_s = 0;
};

struct TrainReport {
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
  std::string checkpoint;
  double wall_s = 0;
  std::size_t negative_fallbacks = 0;
};

template <class T>
struct ModelCache {
  nn::MixerCache<T> mixer;
  typename nn::PosePredictor<T>::Cache predictor;
  typename nn::Projector<T>::Cache projector;
};

template <class T>
struct CompositeValue {
  T pose = T(0);
  T reg = T(0);    // unweighted regularizer
  T total = T(0);  // pose + reg_weight * reg
};

/// Number of stacked point sets per query for a loss configuration.
inline int views_per_query(const LossConfig& cfg) {
  if (!cfg.reg_active()) return 1;
  return cfg.reg_kind == RegKind::Triplet ? 3 : 2;
}

/// Forward and backward through mixer, predictor and projector for one
/// batch. F stacks the query, positive and (triplet) negative point sets,
/// B samples each, as returned by gather(). Gradients accumulate into the
/// model; call zero_grad() first.
template <class T>
CompositeValue<T> composite_loss(nn::RegressorModel<T>& model, const nn::Matrix<T>& F, Eigen::Index B,
                                 const nn::Matrix<T>& t_gt, const nn::Matrix<T>& q_gt, const LossConfig& cfg,
                                 ModelCache<T>& cache) {
  const int views = views_per_query(cfg);
  const Eigen::Index M = model.config.mixer.M;
  if (F.rows() != views * B * M) {
    throw ShapeMismatch("composite loss expects " + std::to_string(views) + " x " + std::to_string(B) +
                        " point sets");
  }
  const nn::Matrix<T> G = nn::mixer_forward(model.mixer, F, cache.mixer);
  const nn::Matrix<T> Gq = G.topRows(B);
  const auto out = model.predictor.forward(Gq, cache.predictor, true);
  const auto pl = pose_loss<T>(out.t, out.q, t_gt, q_gt, cfg.alpha);

  CompositeValue<T> v;
  v.pose = pl.value;
  nn::Matrix<T> dG = nn::Matrix<T>::Zero(G.rows(), G.cols());
  dG.topRows(B) = model.predictor.backward(cache.predictor, pl.da, pl.db);

  if (cfg.reg_active()) {
    const T w = static_cast<T>(cfg.reg_weight);
    const nn::Matrix<T> Y = model.projector.forward(G, cache.projector);
    const nn::Matrix<T> Lq = Y.topRows(B);
    const nn::Matrix<T> Lp = Y.middleRows(B, B);
    nn::Matrix<T> dY = nn::Matrix<T>::Zero(Y.rows(), Y.cols());
    switch (cfg.reg_kind) {
      case RegKind::Barlow: {
        const auto r = barlow_twins_loss<T>(Lq, Lp, cfg.mu, cfg.barlow_standardize);
        v.reg = r.value;
        dY.topRows(B) = r.da;
        dY.middleRows(B, B) = r.db;
        break;
      }
      case RegKind::Triplet: {
        const auto r = triplet_loss<T>(Lq, Lp, Y.bottomRows(B), cfg.margin);
        v.reg = r.value;
        dY.topRows(B) = r.da;
        dY.middleRows(B, B) = r.db;
        dY.bottomRows(B) = r.dc;
        break;
      }
      case RegKind::NTXent: {
        const auto r = ntxent_loss<T>(Lq, Lp, cfg.tau, cfg.ntxent_exclude_positive);
        v.reg = r.value;
        dY.topRows(B) = r.da;
        dY.middleRows(B, B) = r.db;
        break;
      }
      case RegKind::SigLIP: {
        const auto r = siglip_loss<T>(Lq, Lp, model.siglip_tbar.value(0, 0), model.siglip_b.value(0, 0),
                                      cfg.siglip_negate_bias);
        v.reg = r.value;
        dY.topRows(B) = r.da;
        dY.middleRows(B, B) = r.db;
        model.siglip_tbar.grad(0, 0) += w * r.d_tbar;
        model.siglip_b.grad(0, 0) += w * r.d_bias;
        break;
      }
      case RegKind::None:
        break;
    }
    dG += model.projector.backward(cache.projector, dY * w);
  }
  v.total = v.pose + static_cast<T>(cfg.reg_weight) * v.reg;
  if (!cfg.reg_active()) v.total = v.pose;
  nn::mixer_backward(model.mixer, cache.mixer, dG);
  return v;
}

/// Pose targets of the given buffer entries as B x 3 translation and
/// log-quaternion matrices.
template <class T>
std::pair<nn::Matrix<T>, nn::Matrix<T>> pose_targets(const TrainingBuffer& buf, const std::vector<std::uint32_t>& ids) {
  nn::Matrix<T> t(ids.size(), 3);
  nn::Matrix<T> q(ids.size(), 3);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const auto& pose = buf.entries[ids[k]].pose;
    const Vec3 lq = quat_log(pose.q).v;
    for (int c = 0; c < 3; ++c) {
      t(static_cast<Eigen::Index>(k), c) = static_cast<T>(pose.t[c]);
      q(static_cast<Eigen::Index>(k), c) = static_cast<T>(lq[c]);
    }
  }
  return {std::move(t), std::move(q)};
}

inline std::int64_t steps_per_epoch(std::size_t buffer_size, int batch) {
  return static_cast<std::int64_t>((buffer_size + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch));
}

template <class T>
struct TrainResult {
  nn::RegressorModel<T> model;
  TrainReport report;
};

inline nn::ModelConfig model_config_for(const TrainingBuffer& buf, nn::ModelConfig cfg) {
  cfg.mixer.M = static_cast<int>(buf.M);
  cfg.mixer.d = static_cast<int>(buf.d);
  return cfg.resolved();
}

/// Freshly initialized model for a buffer, as training starts from it.
template <class T = float>
nn::RegressorModel<T> initial_model(const TrainingBuffer& buf, const TrainConfig& cfg) {
  nn::RegressorModel<T> model(model_config_for(buf, cfg.model));
  model.init(derive_seed(cfg.seed, 0x696e6974ULL));
  if (cfg.init_translation_bias && buf.size() > 0) {
    Vec3 mean = Vec3::Zero();
    for (const auto& e : buf.entries) mean += e.pose.t;
    mean /= static_cast<double>(buf.size());
    for (int c = 0; c < 3; ++c) model.predictor.t_out.bias.value(0, c) = static_cast<T>(mean[c]);
  }
  return model;
}

/// Trains a regressor on a buffer. Every step draws a mined batch (whether
/// or not the regularizer is active, so the random stream does not depend
/// on it), runs the composite loss and takes one Adam step.
template <class T = float>
TrainResult<T> train(const TrainingBuffer& buf, const TrainConfig& cfg,
                     const std::function<void(const EpochLog&)>& on_epoch = {}) {
  using Clock = std::chrono::steady_clock;
  cfg.loss.validate();
  if (cfg.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (cfg.batch < 1 || static_cast<std::size_t>(cfg.batch) > buf.size()) {
    throw std::invalid_argument("batch size must be between 1 and the buffer size (" + std::to_string(buf.size()) + ")");
  }
  buf.validate();

  TrainResult<T> res{initial_model<T>(buf, cfg), {}};
  auto& model = res.model;
  const auto spe = steps_per_epoch(buf.size(), cfg.batch);
  const std::int64_t total = spe * cfg.epochs;
  if (total == 0) return res;

  const OneCycleSchedule sched{cfg.lr_init, cfg.lr_final, total, cfg.warmup_frac};
  const MiningIndex index(buf, cfg.mining);
  SplitMix64 rng(derive_seed(cfg.seed, 0x6261746368ULL));
  Adam<T> adam(model.parameters());
  ModelCache<T> cache;
  const double ema_a = 2.0 / (cfg.ema_window + 1.0);
  double ema = 0.0;
  const auto B = static_cast<Eigen::Index>(cfg.batch);
  const int views = views_per_query(cfg.loss);
  const auto t_start = Clock::now();

  std::int64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto e_start = Clock::now();
    EpochLog el;
    el.epoch = epoch;
    for (std::int64_t s = 0; s < spe; ++s, ++step) {
      const auto s_start = Clock::now();
      const Batch batch = sample_batch(buf, index, static_cast<std::size_t>(cfg.batch), rng);
      res.report.negative_fallbacks += batch.fallbacks;
      std::vector<std::uint32_t> ids = batch.query;
      if (views >= 2) ids.insert(ids.end(), batch.positive.begin(), batch.positive.end());
      if (views >= 3) ids.insert(ids.end(), batch.negative.begin(), batch.negative.end());
      const nn::Matrix<T> F = gather<T>(buf, ids);
      const auto [t_gt, q_gt] = pose_targets<T>(buf, batch.query);

      model.zero_grad();
      const auto v = composite_loss<T>(model, F, B, t_gt, q_gt, cfg.loss, cache);
      if (!std::isfinite(static_cast<double>(v.total))) {
        throw NonFiniteLoss(static_cast<std::size_t>(step), "pose " + std::to_string(static_cast<double>(v.pose)) +
                                                                ", reg " + std::to_string(static_cast<double>(v.reg)));
      }
      const double lr = sched.lr_at(static_cast<double>(step));
      adam.step(lr);

      const double total_v = static_cast<double>(v.total);
      ema = step == 0 ? total_v : ema_a * total_v + (1.0 - ema_a) * ema;
      StepLog sl{step, static_cast<double>(v.pose), static_cast<double>(v.reg), total_v, lr,
                 std::chrono::duration<double, std::milli>(Clock::now() - s_start).count()};
      res.report.steps.push_back(sl);
      el.loss_pose += sl.loss_pose;
      el.loss_reg += sl.loss_reg;
      el.loss_total += sl.loss_total;
    }
    el.loss_pose /= static_cast<double>(spe);
    el.loss_reg /= static_cast<double>(spe);
    el.loss_total /= static_cast<double>(spe);
    el.ema_total = ema;
    el.wall_s = std::chrono::duration<double>(Clock::now() - e_start).count();
    res.report.epochs.push_back(el);
    if (on_epoch) on_epoch(el);
  }
  res.report.wall_s = std::chrono::duration<double>(Clock::now() - t_start).count();
  return res;
}

inline void write_train_csv(const std::filesystem::path& path, const TrainReport& r) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "step,loss_pose,loss_reg,loss_total,lr,wall_ms\n";
  os << std::setprecision(9);
  for (const auto& s : r.steps) {
    os << s.step << ',' << s.loss_pose << ',' << s.loss_reg << ',' << s.loss_total << ',' << s.lr << ','
       << std::setprecision(4) << s.wall_ms << std::setprecision(9) << '\n';
  }
  if (!os) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Inference and evaluation

/// Predicts poses for every entry of a buffer in eval mode.
template <class T>
std::vector<Pose> predict_buffer(nn::RegressorModel<T>& model, const TrainingBuffer& buf, std::size_t chunk = 64) {
  if (static_cast<int>(buf.M) != model.config.mixer.M || static_cast<int>(buf.d) != model.config.mixer.d) {
    throw ShapeMismatch("buffer is " + std::to_string(buf.M) + "x" + std::to_string(buf.d) + " but the model expects " +
                        std::to_string(model.config.mixer.M) + "x" + std::to_string(model.config.mixer.d));
  }
  std::vector<Pose> out;
  out.reserve(buf.size());
  ModelCache<T> cache;
  for (std::size_t start = 0; start < buf.size(); start += chunk) {
    const std::size_t n = std::min(chunk, buf.size() - start);
    std::vector<std::uint32_t> ids(n);
    std::iota(ids.begin(), ids.end(), static_cast<std::uint32_t>(start));
    const nn::Matrix<T> G = nn::mixer_forward(model.mixer, gather<T>(buf, ids), cache.mixer);
    const auto pred = model.predictor.forward(G, cache.predictor, false);
    for (std::size_t k = 0; k < n; ++k) {
      const auto r = static_cast<Eigen::Index>(k);
      const Vec3 t(pred.t(r, 0), pred.t(r, 1), pred.t(r, 2));
      const Vec3 q(pred.q(r, 0), pred.q(r, 1), pred.q(r, 2));
      out.push_back(Pose{t, quat_exp(LogQuat{q})});
    }
  }
  return out;
}

/// Preprocess, encode and regress a single scan.
template <class T>
Pose predict_pose(nn::RegressorModel<T>& model, const PointCloud& scan, const EncoderConfig& enc,
                  std::uint64_t fps_seed) {
  if (scan.empty()) throw EmptyScan("cannot localize an empty scan");
  TrainingBuffer buf;
  buf.M = static_cast<std::uint32_t>(model.config.mixer.M);
  buf.d = static_cast<std::uint32_t>(enc.d);
  buf.entries.push_back(encode(preprocess(scan, enc), enc, buf.M, fps_seed));
  return predict_buffer(model, buf).front();
}

struct Thresholds {
  double trans_m = 5.0;
  double rot_deg = 5.0;
};

struct EvalRow {
  std::uint32_t scan_id = 0;
  double t_err = 0;
  double r_err = 0;
  Pose pred;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  Thresholds thresholds;
  double mean_t = 0;
  double median_t = 0;
  double mean_r = 0;
  double median_r = 0;
  double rate = 0;  // percent within both thresholds
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t h = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h), v.end());
  const double hi = v[h];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h));
  return 0.5 * (lo + hi);
}

}  // namespace detail

inline EvalReport compute_metrics(const std::vector<std::uint32_t>& ids, const std::vector<Pose>& pred,
                                  const std::vector<Pose>& gt, const Thresholds& th) {
  if (ids.size() != pred.size() || pred.size() != gt.size()) {
    throw std::invalid_argument("prediction and ground-truth counts differ");
  }
  EvalReport r;
  r.thresholds = th;
  std::vector<double> te;
  std::vector<double> re;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    EvalRow row{ids[i], translation_error(pred[i], gt[i]), orientation_error_deg(pred[i].q, gt[i].q), pred[i]};
    if (row.t_err <= th.trans_m && row.r_err <= th.rot_deg) ++hits;
    te.push_back(row.t_err);
    re.push_back(row.r_err);
    r.rows.push_back(row);
  }
  if (!r.rows.empty()) {
    const auto n = static_cast<double>(r.rows.size());
    r.mean_t = std::accumulate(te.begin(), te.end(), 0.0) / n;
    r.mean_r = std::accumulate(re.begin(), re.end(), 0.0) / n;
    r.median_t = detail::median(te);
    r.median_r = detail::median(re);
    r.rate = 100.0 * static_cast<double>(hits) / n;
  }
  return r;
}

/// Chordal mean: mean translation and the dominant eigenvector of
/// sum q q^T.
inline Pose mean_pose(const std::vector<Pose>& poses) {
  if (poses.empty()) return {};
  Vec3 t = Vec3::Zero();
  Eigen::Matrix4d A = Eigen::Matrix4d::Zero();
  for (const auto& p : poses) {
    t += p.t;
    const Eigen::Vector4d q(p.q.w(), p.q.x(), p.q.y(), p.q.z());
    A += q * q.transpose();
  }
  t /= static_cast<double>(poses.size());
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(A);
  const Eigen::Vector4d q = es.eigenvectors().col(3);
  return Pose{t, Quaternion(q[0], q[1], q[2], q[3])};
}

/// Encodes a split of a dataset with the model's encoder settings and
/// evaluates the regressor on it.
template <class T>
EvalReport evaluate(nn::RegressorModel<T>& model, const Manifest& manifest, const EncoderConfig& enc,
                    std::uint64_t fps_seed, const Thresholds& th, const std::string& split = "test",
                    unsigned threads = 1) {
  const TrainingBuffer buf =
      build_buffer(manifest, enc, static_cast<std::size_t>(model.config.mixer.M), fps_seed, split, {}, threads);
  const auto pred = predict_buffer(model, buf);
  std::vector<std::uint32_t> ids;
  std::vector<Pose> gt;
  for (const auto& e : buf.entries) {
    ids.push_back(e.scan_id);
    gt.push_back(e.pose);
  }
  return compute_metrics(ids, pred, gt, th);
}

/// Evaluates a predictor that always answers `constant`.
inline EvalReport evaluate_constant(const Pose& constant, const std::vector<Pose>& gt, const Thresholds& th) {
  std::vector<std::uint32_t> ids(gt.size());
  std::iota(ids.begin(), ids.end(), 0U);
  return compute_metrics(ids, std::vector<Pose>(gt.size(), constant), gt, th);
}

inline void write_eval_csv(const std::filesystem::path& path, const EvalReport& r) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "scan_id,t_err_m,r_err_deg,px,py,pz,qw,qx,qy,qz\n";
  os << std::setprecision(9);
  for (const auto& row : r.rows) {
    const auto& p = row.pred;
    os << row.scan_id << ',' << row.t_err << ',' << row.r_err << ',' << p.t.x() << ',' << p.t.y() << ',' << p.t.z()
       << ',' << p.q.w() << ',' << p.q.x() << ',' << p.q.y() << ',' << p.q.z() << '\n';
  }
  if (!os) throw IoError("write failed: " + path.string());
}

/// Reads the scan id and predicted position columns of an eval CSV.
inline std::vector<std::pair<std::uint32_t, Vec3>> read_eval_positions(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line.rfind("scan_id,", 0) != 0) throw FormatError(path.string() + ": missing header");
  std::vector<std::pair<std::uint32_t, Vec3>> out;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::vector<double> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        f.push_back(std::stod(cell));
      } catch (const std::logic_error&) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (f.size() < 6) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected predicted pose columns");
    out.emplace_back(static_cast<std::uint32_t>(f[0]), Vec3(f[3], f[4], f[5]));
  }
  return out;
}

inline std::string eval_summary(const EvalReport& r, const std::string& prefix = "") {
  std::ostringstream os;
  os << std::setprecision(6);
  os << prefix << "scans=" << r.rows.size() << '\n';
  os << prefix << "trans_thresh_m=" << r.thresholds.trans_m << '\n';
  os << prefix << "rot_thresh_deg=" << r.thresholds.rot_deg << '\n';
  os << prefix << "mean_t_err_m=" << r.mean_t << '\n';
  os << prefix << "median_t_err_m=" << r.median_t << '\n';
  os << prefix << "mean_r_err_deg=" << r.mean_r << '\n';
  os << prefix << "median_r_err_deg=" << r.median_r << '\n';
  os << prefix << "reloc_rate_pct=" << r.rate << '\n';
  return os.str();
}

}  // namespace flashmix
