#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "flashmix/error.hpp"
#include "flashmix/geometry.hpp"
#include "flashmix/pointcloud.hpp"
#include "flashmix/synth.hpp"

namespace flashmix {

/// Everything needed to regenerate a synthetic dataset.
struct DatasetSpec {
  std::uint64_t world_seed = 7;
  double extent = 50.0;
  int landmarks = 40;
  int train_poses = 2000;
  int test_poses = 200;
  double spacing = 1.0;
  std::uint64_t train_seed = 11;
  std::uint64_t test_seed = 13;
  synth::SensorCfg sensor{};
};

/// Parsed dataset manifest: sectioned key = value text.
///
///   [dataset]   world_seed, extent, landmarks, spacing, train_seed, test_seed
///   [sensor]    max_range, noise, density, ref_range, ground, ground_density, ground_radius
///   [train]     poses = <file>, then one "scan = <file>" per scan in order
///   [test]      same as [train]
///
/// Paths are relative to the manifest's directory.
struct Manifest {
  DatasetSpec spec;
  std::filesystem::path root;
  std::filesystem::path train_poses;
  std::filesystem::path test_poses;
  std::vector<std::filesystem::path> train_scans;
  std::vector<std::filesystem::path> test_scans;

  const std::vector<std::filesystem::path>& scans(const std::string& split) const {
    if (split == "train") return train_scans;
    if (split == "test") return test_scans;
    throw std::invalid_argument("unknown split '" + split + "'");
  }

  std::filesystem::path poses_file(const std::string& split) const {
    if (split == "train") return train_poses;
    if (split == "test") return test_poses;
    throw std::invalid_argument("unknown split '" + split + "'");
  }
};

inline constexpr const char* kManifestName = "dataset.toml";

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

inline std::string manifest_text(const DatasetSpec& s, const std::vector<std::string>& train_scans,
                                 const std::vector<std::string>& test_scans) {
  using detail::fmt_double;
  std::ostringstream os;
  os << "# flashmix synthetic dataset\n";
  os << "[dataset]\n";
  os << "version = 1\n";
  os << "world_seed = " << s.world_seed << '\n';
  os << "extent = " << fmt_double(s.extent) << '\n';
  os << "landmarks = " << s.landmarks << '\n';
  os << "spacing = " << fmt_double(s.spacing) << '\n';
  os << "train_seed = " << s.train_seed << '\n';
  os << "test_seed = " << s.test_seed << '\n';
  os << "[sensor]\n";
  os << "max_range = " << fmt_double(s.sensor.max_range) << '\n';
  os << "noise = " << fmt_double(s.sensor.noise) << '\n';
  os << "density = " << fmt_double(s.sensor.density) << '\n';
  os << "ref_range = " << fmt_double(s.sensor.ref_range) << '\n';
  os << "ground = " << (s.sensor.ground ? "true" : "false") << '\n';
  os << "ground_density = " << fmt_double(s.sensor.ground_density) << '\n';
  os << "ground_radius = " << fmt_double(s.sensor.ground_radius) << '\n';
  for (const auto& [name, scans] : {std::pair{"train", &train_scans}, std::pair{"test", &test_scans}}) {
    os << '[' << name << "]\n";
    os << "poses = " << name << "/poses.txt\n";
    for (const auto& f : *scans) os << "scan = " << f << '\n';
  }
  return os.str();
}

inline Manifest read_manifest(const std::filesystem::path& path_in) {
  std::filesystem::path path = path_in;
  if (std::filesystem::is_directory(path)) path /= kManifestName;
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path.string());

  Manifest m;
  m.root = path.parent_path();
  std::string section;
  std::string line;
  int lineno = 0;
  const auto bad = [&](const std::string& why) {
    return FormatError(path.string() + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw bad("malformed section header");
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw bad("expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    try {
      if (section == "dataset") {
        if (key == "version") {
          if (val != "1") throw bad("unsupported manifest version " + val);
        } else if (key == "world_seed") m.spec.world_seed = std::stoull(val);
        else if (key == "extent") m.spec.extent = std::stod(val);
        else if (key == "landmarks") m.spec.landmarks = std::stoi(val);
        else if (key == "spacing") m.spec.spacing = std::stod(val);
        else if (key == "train_seed") m.spec.train_seed = std::stoull(val);
        else if (key == "test_seed") m.spec.test_seed = std::stoull(val);
      } else if (section == "sensor") {
        if (key == "max_range") m.spec.sensor.max_range = std::stod(val);
        else if (key == "noise") m.spec.sensor.noise = std::stod(val);
        else if (key == "density") m.spec.sensor.density = std::stod(val);
        else if (key == "ref_range") m.spec.sensor.ref_range = std::stod(val);
        else if (key == "ground") m.spec.sensor.ground = (val == "true" || val == "1");
        else if (key == "ground_density") m.spec.sensor.ground_density = std::stod(val);
        else if (key == "ground_radius") m.spec.sensor.ground_radius = std::stod(val);
      } else if (section == "train" || section == "test") {
        auto& scans = section == "train" ? m.train_scans : m.test_scans;
        auto& poses = section == "train" ? m.train_poses : m.test_poses;
        if (key == "poses") poses = m.root / val;
        else if (key == "scan") scans.push_back(m.root / val);
      }
    } catch (const std::logic_error&) {
      throw bad("bad value for '" + key + "'");
    }
  }
  m.spec.train_poses = static_cast<int>(m.train_scans.size());
  m.spec.test_poses = static_cast<int>(m.test_scans.size());
  return m;
}

/// 64-bit FNV-1a of a file's bytes.
inline std::uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

struct GeneratedDataset {
  synth::World world;
  synth::Trajectory train;
  synth::Trajectory test;
};

/// Scan stream keys: training scans use their index, test scans are offset
/// so the two splits never share a random stream.
inline constexpr std::uint64_t kTestScanKeyOffset = 1ULL << 32;

inline GeneratedDataset make_dataset(const DatasetSpec& spec) {
  GeneratedDataset g;
  g.world = synth::generate_world(spec.world_seed, spec.extent, spec.landmarks);
  g.train = synth::generate_trajectory(g.world, spec.train_poses, spec.spacing, spec.train_seed);
  g.test = synth::generate_retraversal(g.world, g.train, spec.test_poses, spec.test_seed);
  return g;
}

/// Generates the world, both trajectories and every scan, writing the
/// manifest, FMPC scans and pose files under `dir`.
inline Manifest write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec,
                              const std::function<void(const std::string&, int)>& progress = {}) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "train", ec);
  fs::create_directories(dir / "test", ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  const GeneratedDataset g = make_dataset(spec);
  std::vector<std::string> names[2];
  const synth::Trajectory* trajs[2] = {&g.train, &g.test};
  const char* splits[2] = {"train", "test"};
  for (int s = 0; s < 2; ++s) {
    const auto& poses = trajs[s]->poses;
    for (std::size_t i = 0; i < poses.size(); ++i) {
      const std::uint64_t key = (s == 0 ? 0 : kTestScanKeyOffset) + i;
      const PointCloud cloud = synth::simulate_scan(g.world, poses[i], spec.sensor, key);
      std::ostringstream name;
      name << splits[s] << '/' << std::setw(6) << std::setfill('0') << i << ".fmpc";
      write_scan(dir / name.str(), cloud);
      names[s].push_back(name.str());
      if (progress) progress(splits[s], static_cast<int>(i));
    }
    write_poses(dir / splits[s] / "poses.txt", poses);
  }
  const fs::path manifest = dir / kManifestName;
  std::ofstream os(manifest);
  if (!os) throw IoError("cannot write " + manifest.string());
  os << manifest_text(spec, names[0], names[1]);
  os.close();
  if (!os) throw IoError("write failed: " + manifest.string());
  return read_manifest(manifest);
}

}  // namespace flashmix
