#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "flashmix/buffer.hpp"
#include "flashmix/dataset.hpp"
#include "flashmix/pipeline.hpp"

namespace fs = std::filesystem;
using namespace flashmix;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Profile {
  int m;
  int d;
  int l;
  int batch;
  int epochs;
  double lr;
  double lr_final;
  double trans_thresh;
};

const std::map<std::string, Profile>& profiles() {
  static const std::map<std::string, Profile> p = {
      {"desk", {512, 32, 128, 256, 30, 0.01, 1e-6, 5.0}},
      {"tiny", {64, 16, 32, 32, 5, 0.01, 1e-6, 5.0}},
      {"paper", {1024, 32, 1024, 1024, 30, 0.01, 1e-6, 5.0}},
      {"indoor", {512, 32, 128, 256, 30, 0.001, 1e-5, 0.25}},
  };
  return p;
}

struct GenArgs {
  DatasetSpec spec;
  std::string out;
};

struct EncodeArgs {
  std::string dataset;
  std::string out;
  std::string split = "train";
  int m = 512;
  int d = 32;
  std::uint64_t seed = 1;
  double radius = 2.0;
  double voxel = 0.5;
  unsigned threads = std::max(1U, std::thread::hardware_concurrency());
};

struct TrainArgs {
  std::string buffer;
  std::string out = "model.fmck";
  std::string report;
  std::string reg = "none";
  TrainConfig cfg;
  double radius = 2.0;
  double voxel = 0.5;
};

struct EvalArgs {
  std::string ckpt;
  std::string dataset;
  std::string out = "eval.csv";
  std::string summary;
  std::string split = "test";
  Thresholds th;
  std::uint64_t seed = 1;
  bool oracle = false;
  unsigned threads = std::max(1U, std::thread::hardware_concurrency());
};

struct PlotArgs {
  std::string eval_csv;
  std::string gt_poses;
  std::string out = "trajectory.svg";
};

EncoderConfig encoder_config(int d, double radius, double voxel) {
  EncoderConfig e;
  e.d = d;
  e.neighborhood_radius = radius;
  e.voxel = voxel;
  return e;
}

// Fills options the user left unset from the selected profile.
template <class V>
void from_profile(CLI::Option* opt, V& target, V value) {
  if (opt->count() == 0) target = value;
}

int cmd_gen(const GenArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  const Manifest m = write_dataset(a.out, a.spec, [](const std::string& split, int i) {
    if ((i + 1) % 250 == 0) std::cerr << "  " << split << ": " << (i + 1) << " scans\n";
  });
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "dataset=" << fs::path(a.out) / kManifestName << '\n'
            << "train_scans=" << m.train_scans.size() << '\n'
            << "test_scans=" << m.test_scans.size() << '\n'
            << "manifest_hash=" << std::hex << file_hash(fs::path(a.out) / kManifestName) << std::dec << '\n'
            << "elapsed_s=" << s << '\n';
  return kOk;
}

int cmd_encode(const EncodeArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  const Manifest manifest = read_manifest(a.dataset);
  const EncoderConfig enc = encoder_config(a.d, a.radius, a.voxel);
  const TrainingBuffer buf = build_buffer(
      manifest, enc, static_cast<std::size_t>(a.m), a.seed, a.split,
      [](std::size_t done, std::size_t n) {
        if (done % 250 == 0 || done == n) std::cerr << "  encoded " << done << "/" << n << '\n';
      },
      a.threads);
  save_buffer(a.out, buf);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "buffer=" << a.out << '\n'
            << "entries=" << buf.size() << '\n'
            << "M=" << buf.M << '\n'
            << "d=" << buf.d << '\n'
            << "encoder_hash=" << std::hex << buf.encoder_hash << std::dec << '\n'
            << "bytes=" << fs::file_size(a.out) << '\n'
            << "elapsed_s=" << s << '\n';
  return kOk;
}

int cmd_train(TrainArgs a) {
  a.cfg.loss.reg_kind = parse_reg_kind(a.reg);
  const TrainingBuffer buf = load_buffer(a.buffer);
  const EncoderConfig enc = encoder_config(static_cast<int>(buf.d), a.radius, a.voxel);
  buf.check_encoder(enc.hash());
  std::cerr << "training on " << buf.size() << " entries, reg=" << a.reg << '\n';
  auto res = train<float>(buf, a.cfg, [&](const EpochLog& e) {
    std::cerr << "  epoch " << e.epoch << "/" << a.cfg.epochs << "  pose " << e.loss_pose << "  reg " << e.loss_reg
              << "  total " << e.loss_total << "  ema " << e.ema_total << "  (" << e.wall_s << " s)\n";
  });
  save_checkpoint(a.out, res.model, nn::CheckpointMeta{enc, buf.encoder_hash});
  res.report.checkpoint = a.out;
  const std::string report = a.report.empty() ? fs::path(a.out).replace_extension(".train.csv").string() : a.report;
  write_train_csv(report, res.report);
  std::cout << "checkpoint=" << a.out << '\n'
            << "report=" << report << '\n'
            << "steps=" << res.report.steps.size() << '\n'
            << "final_ema_loss=" << (res.report.epochs.empty() ? 0.0 : res.report.epochs.back().ema_total) << '\n'
            << "negative_fallbacks=" << res.report.negative_fallbacks << '\n'
            << "train_wall_s=" << res.report.wall_s << '\n';
  return kOk;
}

int cmd_eval(const EvalArgs& a) {
  const Manifest manifest = read_manifest(a.dataset);
  const std::vector<Pose> gt = read_poses(manifest.poses_file(a.split));
  EvalReport report;
  if (a.oracle) {
    std::vector<std::uint32_t> ids(gt.size());
    std::iota(ids.begin(), ids.end(), 0U);
    report = compute_metrics(ids, gt, gt, a.th);
  } else {
    auto ck = nn::load_checkpoint<float>(a.ckpt);
    report = evaluate(ck.model, manifest, ck.meta.encoder, a.seed, a.th, a.split, a.threads);
  }
  write_eval_csv(a.out, report);
  const EvalReport base = evaluate_constant(mean_pose(read_poses(manifest.train_poses)), gt, a.th);
  const std::string summary = "eval_csv=" + a.out + "\n" + eval_summary(report) + eval_summary(base, "baseline_");
  std::cout << summary;
  if (!a.summary.empty()) {
    std::ofstream os(a.summary);
    os << summary;
    if (!os) throw IoError("write failed: " + a.summary);
  }
  return kOk;
}

int cmd_plot(const PlotArgs& a) {
  const auto pred = read_eval_positions(a.eval_csv);
  const std::vector<Pose> gt = read_poses(a.gt_poses);
  if (gt.empty()) throw FormatError(a.gt_poses + ": no poses");

  double lo_x = gt[0].t.x(), hi_x = lo_x, lo_y = gt[0].t.y(), hi_y = lo_y;
  const auto extend = [&](const Vec3& p) {
    lo_x = std::min(lo_x, p.x());
    hi_x = std::max(hi_x, p.x());
    lo_y = std::min(lo_y, p.y());
    hi_y = std::max(hi_y, p.y());
  };
  for (const auto& p : gt) extend(p.t);
  for (const auto& [id, p] : pred) extend(p);
  const double size = 800.0, pad = 20.0;
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-6});
  const double k = (size - 2 * pad) / span;
  const auto sx = [&](double x) { return pad + (x - lo_x) * k; };
  const auto sy = [&](double y) { return size - pad - (y - lo_y) * k; };

  std::ofstream os(a.out);
  if (!os) throw IoError("cannot open " + a.out + " for writing");
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\" viewBox=\"0 0 "
     << size << ' ' << size << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<g class=\"ground-truth\" fill=\"#00008b\">\n";
  for (const auto& p : gt) os << "<circle cx=\"" << sx(p.t.x()) << "\" cy=\"" << sy(p.t.y()) << "\" r=\"2.5\"/>\n";
  os << "</g>\n<g class=\"predicted\" fill=\"#d62728\">\n";
  for (const auto& [id, p] : pred) os << "<circle cx=\"" << sx(p.x()) << "\" cy=\"" << sy(p.y()) << "\" r=\"2.5\"/>\n";
  os << "</g>\n";
  const double cx = sx(gt[0].t.x()), cy = sy(gt[0].t.y());
  os << "<polygon class=\"start\" fill=\"gold\" stroke=\"black\" points=\"";
  for (int i = 0; i < 10; ++i) {
    const double r = i % 2 == 0 ? 10.0 : 4.0;
    const double ang = -std::numbers::pi / 2 + i * std::numbers::pi / 5;
    os << cx + r * std::cos(ang) << ',' << cy + r * std::sin(ang) << (i < 9 ? " " : "");
  }
  os << "\"/>\n</svg>\n";
  if (!os) throw IoError("write failed: " + a.out);
  std::cout << "svg=" << a.out << "\nground_truth=" << gt.size() << "\npredicted=" << pred.size() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flashmix: map-free LiDAR localization by buffer-trained pose regression"};
  app.require_subcommand(0, 1);
  app.set_config("--config", "", "key = value config file (values are overridden by flags)");
  bool show_config = false;
  app.add_flag("--print-config", show_config, "Print the fully resolved configuration and exit");
  std::string profile = "desk";
  app.add_option("--profile", profile, "Size profile: desk, tiny, paper or indoor")
      ->check(CLI::IsMember({"desk", "tiny", "paper", "indoor"}))
      ->capture_default_str();

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic scene, trajectories and scans");
  g->add_option("--seed", gen.spec.world_seed, "World seed")->capture_default_str();
  g->add_option("--train-seed", gen.spec.train_seed, "Training trajectory seed")->capture_default_str();
  g->add_option("--test-seed", gen.spec.test_seed, "Test trajectory seed")->capture_default_str();
  g->add_option("--extent", gen.spec.extent, "Side of the square world, m")->capture_default_str();
  g->add_option("--landmarks", gen.spec.landmarks, "Number of landmarks")->capture_default_str();
  g->add_option("--train-poses", gen.spec.train_poses, "Training scans")->capture_default_str();
  g->add_option("--test-poses", gen.spec.test_poses, "Test scans")->capture_default_str();
  g->add_option("--spacing", gen.spec.spacing, "Distance between consecutive poses, m")->capture_default_str();
  g->add_option("--max-range", gen.spec.sensor.max_range, "Sensor range, m")->capture_default_str();
  g->add_option("--noise", gen.spec.sensor.noise, "Range noise sigma, m")->capture_default_str();
  g->add_option("--density", gen.spec.sensor.density, "Surface samples per m^2 near the sensor")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->required();

  EncodeArgs enc;
  auto* e = app.add_subcommand("encode", "Encode a dataset split into a training buffer");
  e->add_option("--dataset", enc.dataset, "Dataset directory or manifest")->required();
  e->add_option("--out", enc.out, "Output buffer file")->required();
  auto* e_m = e->add_option("--m", enc.m, "Points per scan after FPS")->capture_default_str();
  auto* e_d = e->add_option("--d", enc.d, "Descriptor dimension")->capture_default_str();
  e->add_option("--seed", enc.seed, "FPS seed")->capture_default_str();
  e->add_option("--split", enc.split, "Dataset split")->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  e->add_option("--radius", enc.radius, "Neighborhood radius, m")->capture_default_str();
  e->add_option("--voxel", enc.voxel, "Voxel size, m")->capture_default_str();
  e->add_option("--threads", enc.threads, "Worker threads")->capture_default_str();

  TrainArgs tr;
  auto& tc = tr.cfg;
  auto* t = app.add_subcommand("train", "Train the pose regressor on a buffer");
  t->add_option("--buffer", tr.buffer, "Training buffer")->required();
  t->add_option("--out", tr.out, "Output checkpoint")->capture_default_str();
  t->add_option("--report", tr.report, "Per-step CSV (default: <out>.train.csv)");
  t->add_option("--reg", tr.reg, "Regularizer")
      ->check(CLI::IsMember({"none", "barlow", "triplet", "ntxent", "siglip"}))
      ->capture_default_str();
  auto* t_epochs = t->add_option("--epochs", tc.epochs, "Epochs")->capture_default_str();
  auto* t_batch = t->add_option("--batch", tc.batch, "Batch size")->capture_default_str();
  auto* t_lr = t->add_option("--lr", tc.lr_init, "Peak learning rate")->capture_default_str();
  auto* t_lr_final = t->add_option("--lr-final", tc.lr_final, "Final learning rate")->capture_default_str();
  t->add_option("--warmup", tc.warmup_frac, "Warmup fraction of all steps")->capture_default_str();
  t->add_option("--alpha", tc.loss.alpha, "Rotation weight in the pose loss")->capture_default_str();
  t->add_option("--reg-weight", tc.loss.reg_weight, "Regularizer weight")->capture_default_str();
  t->add_option("--mu", tc.loss.mu, "Barlow Twins off-diagonal weight")->capture_default_str();
  t->add_option("--margin", tc.loss.margin, "Triplet margin")->capture_default_str();
  t->add_option("--tau", tc.loss.tau, "NTXent temperature")->capture_default_str();
  t->add_flag("--barlow-standardize", tc.loss.barlow_standardize, "Mean-center columns in Barlow Twins");
  t->add_flag("--ntxent-exclude-positive", tc.loss.ntxent_exclude_positive, "Drop the positive from the NTXent denominator");
  bool siglip_plus_bias = false;
  t->add_flag("--siglip-plus-bias", siglip_plus_bias, "SigLIP logits t*s + b instead of t*s - b");
  t->add_option("--d-pos", tc.mining.d_pos, "Positive distance, m")->capture_default_str();
  t->add_option("--d-neg", tc.mining.d_neg, "Negative distance, m")->capture_default_str();
  auto* t_l = t->add_option("--l", tc.model.mixer.l, "Global descriptor dimension")->capture_default_str();
  t->add_option("--mixer-layers", tc.model.mixer.layers, "Mixer layers (0: MLP+GAP)")->capture_default_str();
  bool no_residual = false;
  t->add_flag("--no-residual", no_residual, "Disable residual connections in the mixer");
  t->add_option("--trunk", tc.model.trunk_layers, "Predictor trunk layers")->capture_default_str();
  t->add_option("--seed", tc.seed, "Training seed")->capture_default_str();
  t->add_option("--radius", tr.radius, "Encoder radius the buffer was built with")->capture_default_str();
  t->add_option("--voxel", tr.voxel, "Encoder voxel size the buffer was built with")->capture_default_str();

  EvalArgs ev;
  auto* v = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  v->add_option("--ckpt", ev.ckpt, "Checkpoint");
  v->add_option("--dataset", ev.dataset, "Dataset directory or manifest")->required();
  v->add_option("--out", ev.out, "Per-scan CSV")->capture_default_str();
  v->add_option("--summary", ev.summary, "Also write the key=value summary here");
  auto* v_trans = v->add_option("--trans-thresh", ev.th.trans_m, "Translation threshold, m")->capture_default_str();
  v->add_option("--rot-thresh", ev.th.rot_deg, "Rotation threshold, deg")->capture_default_str();
  v->add_option("--split", ev.split, "Dataset split")->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  v->add_option("--seed", ev.seed, "FPS seed")->capture_default_str();
  v->add_option("--threads", ev.threads, "Encoder threads")->capture_default_str();
  v->add_flag("--oracle", ev.oracle, "Answer with the ground truth (test hook)");

  PlotArgs pl;
  auto* p = app.add_subcommand("plot", "Plot ground-truth and predicted positions as SVG");
  p->add_option("--eval-csv", pl.eval_csv, "Eval CSV")->required();
  p->add_option("--gt-poses", pl.gt_poses, "Ground-truth pose file")->required();
  p->add_option("--out", pl.out, "Output SVG")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kUsage;
  }

  const Profile& pr = profiles().at(profile);
  from_profile(e_m, enc.m, pr.m);
  from_profile(e_d, enc.d, pr.d);
  from_profile(t_l, tc.model.mixer.l, pr.l);
  from_profile(t_batch, tc.batch, pr.batch);
  from_profile(t_epochs, tc.epochs, pr.epochs);
  from_profile(t_lr, tc.lr_init, pr.lr);
  from_profile(t_lr_final, tc.lr_final, pr.lr_final);
  from_profile(v_trans, ev.th.trans_m, pr.trans_thresh);
  tc.model.mixer.residual = !no_residual;
  tc.loss.siglip_negate_bias = !siglip_plus_bias;

  if (show_config) {
    // Write resolved values back so the dump reflects profile defaults too.
    e_m->default_val(enc.m);
    e_d->default_val(enc.d);
    t_l->default_val(tc.model.mixer.l);
    t_batch->default_val(tc.batch);
    t_epochs->default_val(tc.epochs);
    t_lr->default_val(tc.lr_init);
    t_lr_final->default_val(tc.lr_final);
    v_trans->default_val(ev.th.trans_m);
    std::cout << app.config_to_str(true, true);
    return kOk;
  }

  if (app.get_subcommands().empty()) {
    std::cerr << "A subcommand is required\n" << app.help();
    return kUsage;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*e) return cmd_encode(enc);
    if (*t) return cmd_train(tr);
    if (*v) {
      if (!ev.oracle && ev.ckpt.empty()) {
        std::cerr << "eval: --ckpt is required unless --oracle is given\n";
        return kUsage;
      }
      return cmd_eval(ev);
    }
    if (*p) return cmd_plot(pl);
  } catch (const NonFiniteLoss& err) {
    std::cerr << "numerical error: " << err.what() << '\n';
    return kNumeric;
  } catch (const std::invalid_argument& err) {
    std::cerr << "usage error: " << err.what() << '\n';
    return kUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kData;
  }
  return kUsage;
}
