#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "flashmix/encoder.hpp"
#include "flashmix/error.hpp"
#include "flashmix/nn/layers.hpp"
#include "flashmix/nn/mixer.hpp"
#include "flashmix/nn/predictor.hpp"
#include "flashmix/pointcloud.hpp"

namespace flashmix::nn {

struct ModelConfig {
  MixerConfig mixer{};
  int trunk_layers = 6;
  int head_hidden = 0;
  int projector_hidden = 0;
  int projector_out = 0;

  PredictorConfig predictor() const { return PredictorConfig{mixer.l, trunk_layers, head_hidden}.resolved(); }
  ProjectorConfig projector() const { return ProjectorConfig{mixer.l, projector_hidden, projector_out}.resolved(); }

  ModelConfig resolved() const {
    ModelConfig c = *this;
    c.mixer = mixer.resolved();
    c.head_hidden = c.predictor().head_hidden;
    c.projector_hidden = c.projector().hidden;
    c.projector_out = c.projector().out;
    return c;
  }

  void validate() const {
    if (mixer.M < 1 || mixer.d < 1 || mixer.l < 1 || mixer.layers < 0 || trunk_layers < 0) {
      throw std::invalid_argument("model dimensions must be positive");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

inline constexpr double kSiglipInitTemperature = 0.07;

/// Aggregator, pose predictor, projector and the two trainable SigLIP
/// scalars.
template <class T>
struct RegressorModel {
  ModelConfig config;
  MixerAggregator<T> mixer;
  PosePredictor<T> predictor;
  Projector<T> projector;
  Parameter<T> siglip_tbar{"siglip.tbar", 1, 1};
  Parameter<T> siglip_b{"siglip.b", 1, 1};

  RegressorModel() = default;
  explicit RegressorModel(const ModelConfig& cfg)
      : config((cfg.validate(), cfg.resolved())),
        mixer(config.mixer),
        predictor(config.predictor()),
        projector(config.projector()) {}

  void init(std::uint64_t seed) {
    SplitMix64 rng(seed);
    mixer.init(rng);
    predictor.init(rng);
    projector.init(rng);
    siglip_tbar.value(0, 0) = static_cast<T>(std::log(1.0 / kSiglipInitTemperature));
    siglip_b.value(0, 0) = T(0);
  }

  /// Trainable parameters in a fixed order.
  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    mixer.collect(out);
    predictor.collect(out);
    projector.collect(out);
    out.push_back(&siglip_tbar);
    out.push_back(&siglip_b);
    return out;
  }

  /// Non-trained state (batch-norm running statistics).
  std::vector<Parameter<T>*> state() {
    std::vector<Parameter<T>*> out;
    predictor.collect_state(out);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += static_cast<std::size_t>(p->size());
    return n;
  }
};

// ---------------------------------------------------------------------------
// Checkpoint file: "FMCK", u32 version, u32 config word count, config words
// (u32), encoder block, u32 section count, then per section u32 name length,
// name bytes, u32 rows, u32 cols, rows*cols f32. Little-endian throughout.

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Encoder settings stored alongside the weights so inference can rebuild
/// descriptors the same way the training buffer was built.
struct CheckpointMeta {
  EncoderConfig encoder{};
  std::uint64_t encoder_hash = 0;
};

namespace detail {

inline std::vector<std::uint32_t> config_words(const ModelConfig& c) {
  const auto& m = c.mixer;
  return {static_cast<std::uint32_t>(m.M),
          static_cast<std::uint32_t>(m.d),
          static_cast<std::uint32_t>(m.l),
          static_cast<std::uint32_t>(m.layers),
          static_cast<std::uint32_t>(m.hidden_points),
          static_cast<std::uint32_t>(m.hidden_features),
          m.residual ? 1U : 0U,
          static_cast<std::uint32_t>(c.trunk_layers),
          static_cast<std::uint32_t>(c.head_hidden),
          static_cast<std::uint32_t>(c.projector_hidden),
          static_cast<std::uint32_t>(c.projector_out)};
}

inline ModelConfig config_from_words(const std::vector<std::uint32_t>& w, const std::string& what) {
  if (w.size() != 11) throw FormatError(what + ": unexpected config block size " + std::to_string(w.size()));
  ModelConfig c;
  c.mixer.M = static_cast<int>(w[0]);
  c.mixer.d = static_cast<int>(w[1]);
  c.mixer.l = static_cast<int>(w[2]);
  c.mixer.layers = static_cast<int>(w[3]);
  c.mixer.hidden_points = static_cast<int>(w[4]);
  c.mixer.hidden_features = static_cast<int>(w[5]);
  c.mixer.residual = w[6] != 0;
  c.trunk_layers = static_cast<int>(w[7]);
  c.head_hidden = static_cast<int>(w[8]);
  c.projector_hidden = static_cast<int>(w[9]);
  c.projector_out = static_cast<int>(w[10]);
  return c;
}

inline void write_encoder(std::ostream& os, const EncoderConfig& e) {
  using flashmix::detail::write_le;
  write_le<std::int32_t>(os, e.d);
  write_le<double>(os, e.neighborhood_radius);
  write_le<std::uint64_t>(os, e.projection_seed);
  write_le<std::uint8_t>(os, e.remove_ground ? 1 : 0);
  write_le<std::int32_t>(os, e.ground.iterations);
  write_le<double>(os, e.ground.inlier_dist);
  write_le<double>(os, e.ground.max_tilt_deg);
  write_le<std::uint64_t>(os, e.ground.seed);
  write_le<double>(os, e.voxel);
}

inline EncoderConfig read_encoder(std::istream& is, const std::string& what) {
  using flashmix::detail::read_le;
  EncoderConfig e;
  e.d = read_le<std::int32_t>(is, what);
  e.neighborhood_radius = read_le<double>(is, what);
  e.projection_seed = read_le<std::uint64_t>(is, what);
  e.remove_ground = read_le<std::uint8_t>(is, what) != 0;
  e.ground.iterations = read_le<std::int32_t>(is, what);
  e.ground.inlier_dist = read_le<double>(is, what);
  e.ground.max_tilt_deg = read_le<double>(is, what);
  e.ground.seed = read_le<std::uint64_t>(is, what);
  e.voxel = read_le<double>(is, what);
  return e;
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::filesystem::path& path, RegressorModel<T>& model, const CheckpointMeta& meta) {
  using flashmix::detail::write_le;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write("FMCK", 4);
  write_le<std::uint32_t>(os, kCheckpointVersion);
  const auto words = detail::config_words(model.config);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(words.size()));
  for (auto w : words) write_le<std::uint32_t>(os, w);
  detail::write_encoder(os, meta.encoder);
  write_le<std::uint64_t>(os, meta.encoder_hash);

  auto params = model.parameters();
  const auto st = model.state();
  params.insert(params.end(), st.begin(), st.end());
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p->value.rows()));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p->value.cols()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) write_le<float>(os, static_cast<float>(p->value.data()[i]));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

template <class T = float>
struct LoadedCheckpoint {
  RegressorModel<T> model;
  CheckpointMeta meta;
};

template <class T = float>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  using flashmix::detail::read_le;
  const std::string name = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + name);
  flashmix::detail::expect_magic(is, "FMCK", name);
  const auto version = read_le<std::uint32_t>(is, name);
  if (version != kCheckpointVersion) {
    throw FormatError(name + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto n_words = read_le<std::uint32_t>(is, name);
  if (n_words > 64) throw FormatError(name + ": corrupt config block");
  std::vector<std::uint32_t> words(n_words);
  for (auto& w : words) w = read_le<std::uint32_t>(is, name);

  LoadedCheckpoint<T> out{RegressorModel<T>(detail::config_from_words(words, name)), {}};
  out.meta.encoder = detail::read_encoder(is, name);
  out.meta.encoder_hash = read_le<std::uint64_t>(is, name);

  std::map<std::string, Parameter<T>*> by_name;
  auto params = out.model.parameters();
  const auto st = out.model.state();
  params.insert(params.end(), st.begin(), st.end());
  for (auto* p : params) by_name[p->name] = p;

  const auto n_sections = read_le<std::uint32_t>(is, name);
  if (n_sections != params.size()) {
    throw FormatError(name + ": expected " + std::to_string(params.size()) + " sections, found " +
                      std::to_string(n_sections));
  }
  for (std::uint32_t s = 0; s < n_sections; ++s) {
    const auto len = read_le<std::uint32_t>(is, name);
    if (len > 256) throw FormatError(name + ": corrupt section name");
    std::string key(len, '\0');
    if (!is.read(key.data(), len)) throw FormatError("truncated " + name);
    const auto it = by_name.find(key);
    if (it == by_name.end()) throw FormatError(name + ": unknown section '" + key + "'");
    auto& value = it->second->value;
    const auto rows = read_le<std::uint32_t>(is, name);
    const auto cols = read_le<std::uint32_t>(is, name);
    if (rows != value.rows() || cols != value.cols()) {
      throw FormatError(name + ": section '" + key + "' has the wrong shape");
    }
    for (Eigen::Index i = 0; i < value.size(); ++i) value.data()[i] = static_cast<T>(read_le<float>(is, name));
    if (!value.allFinite()) throw FormatError(name + ": non-finite values in '" + key + "'");
    by_name.erase(it);
  }
  return out;
}

}  // namespace flashmix::nn
