#pragma once

#include "stfield/signal.hpp"

#include "json.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>

namespace stfield {

namespace fs = std::filesystem;

/// Raw little-endian float64 arrays.
inline void write_f64(const fs::path& path, const double* data, std::size_t count) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SchemaError("cannot write " + path.string());
  for (std::size_t i = 0; i < count; ++i) {
    auto bits = std::bit_cast<std::uint64_t>(data[i]);
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
    out.write(reinterpret_cast<const char*>(b), 8);
  }
  if (!out) throw SchemaError("short write to " + path.string());
}

inline std::vector<double> read_f64(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open " + path.string());
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (raw.size() % 8 != 0) throw SchemaError(path.string() + " is not a whole number of float64 values");
  std::vector<double> out(raw.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(raw[8 * i + static_cast<std::size_t>(k)]) << (8 * k);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

inline nlohmann::json positions_to_json(const Positions& pts) {
  auto arr = nlohmann::json::array();
  for (const auto& p : pts) arr.push_back({p.x(), p.y(), p.z()});
  return arr;
}

inline Positions positions_from_json(const nlohmann::json& j, const char* what) {
  if (!j.is_array()) throw SchemaError(std::string(what) + " must be an array of [x, y, z]");
  Positions out;
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 3) throw SchemaError(std::string(what) + " entries must be [x, y, z]");
    for (const auto& v : p)
      if (!v.is_number()) throw SchemaError(std::string(what) + " coordinates must be numbers");
    out.emplace_back(p[0].get<double>(), p[1].get<double>(), p[2].get<double>());
  }
  return out;
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw SchemaError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Impulse responses from one source to microphone and validation positions.
struct RirDataset {
  Positions mics;
  Positions validation;
  std::vector<Vector> mic_rirs;
  std::vector<Vector> validation_rirs;
  double sample_rate = 8000.0;

  Index rir_length() const { return mic_rirs.empty() ? 0 : mic_rirs.front().size(); }

  void validate() const {
    if (mics.size() != mic_rirs.size()) throw SchemaError("microphone position and RIR counts differ");
    if (validation.size() != validation_rirs.size()) throw SchemaError("validation position and RIR counts differ");
    if (mics.empty()) throw SchemaError("dataset has no microphones");
    if (!(sample_rate > 0.0)) throw SchemaError("sample rate must be positive");
    const Index len = rir_length();
    for (const auto* set : {&mic_rirs, &validation_rirs})
      for (const auto& h : *set)
        if (h.size() != len || len == 0) throw SchemaError("all RIRs must share one non-zero length");
  }
};

inline constexpr const char* kRirFormat = "stfield-rir";
inline constexpr int kRirVersion = 1;

inline void write_rir_dataset(const fs::path& dir, const RirDataset& ds) {
  ds.validate();
  fs::create_directories(dir);
  nlohmann::json m;
  m["format"] = kRirFormat;
  m["version"] = kRirVersion;
  m["sample_rate"] = ds.sample_rate;
  m["rir_length"] = ds.rir_length();
  m["mic_positions"] = positions_to_json(ds.mics);
  m["validation_positions"] = positions_to_json(ds.validation);
  auto emit = [&](const std::vector<Vector>& rirs, const char* prefix) {
    auto files = nlohmann::json::array();
    for (std::size_t i = 0; i < rirs.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "%s_%04zu.f64", prefix, i);
      write_f64(dir / name, rirs[i].data(), static_cast<std::size_t>(rirs[i].size()));
      files.push_back(name);
    }
    return files;
  };
  m["mic_files"] = emit(ds.mic_rirs, "mic");
  m["validation_files"] = emit(ds.validation_rirs, "val");
  write_json(dir / "manifest.json", m);
}

/// Integer up/down factors for fs_in -> fs_out. Rates must be integral in Hz.
inline std::pair<Index, Index> resampling_ratio(double fs_in, double fs_out) {
  const auto a = static_cast<long long>(std::llround(fs_in));
  const auto b = static_cast<long long>(std::llround(fs_out));
  if (a <= 0 || b <= 0 || std::abs(fs_in - static_cast<double>(a)) > 1e-9 ||
      std::abs(fs_out - static_cast<double>(b)) > 1e-9)
    throw SchemaError("sample rates must be positive integers for rational resampling");
  const long long g = std::gcd(a, b);
  return {static_cast<Index>(b / g), static_cast<Index>(a / g)};
}

/// Loads a container written by write_rir_dataset. A positive `fs` resamples
/// every RIR to that rate, keeping each filter's DC gain.
inline RirDataset load_rir_dataset(const fs::path& dir, double fs = 0.0) {
  const auto m = read_json(dir / "manifest.json");
  try {
    if (m.at("format").get<std::string>() != kRirFormat) throw SchemaError("unknown container format");
    if (m.at("version").get<int>() != kRirVersion) throw SchemaError("unsupported container version");
    RirDataset ds;
    ds.sample_rate = m.at("sample_rate").get<double>();
    const auto len = m.at("rir_length").get<Index>();
    ds.mics = positions_from_json(m.at("mic_positions"), "mic_positions");
    ds.validation = positions_from_json(m.at("validation_positions"), "validation_positions");
    auto load = [&](const nlohmann::json& files, std::vector<Vector>& dst) {
      for (const auto& f : files) {
        const auto raw = read_f64(dir / f.get<std::string>());
        if (static_cast<Index>(raw.size()) != len) throw SchemaError("RIR file length disagrees with rir_length");
        dst.push_back(Eigen::Map<const Vector>(raw.data(), len));
      }
    };
    load(m.at("mic_files"), ds.mic_rirs);
    load(m.at("validation_files"), ds.validation_rirs);
    ds.validate();
    if (fs > 0.0 && std::abs(fs - ds.sample_rate) > 1e-9) {
      const auto [up, down] = resampling_ratio(ds.sample_rate, fs);
      for (auto* set : {&ds.mic_rirs, &ds.validation_rirs})
        for (auto& h : *set)
          h = resample_rational(h, up, down) * (static_cast<double>(down) / static_cast<double>(up));
      ds.sample_rate = fs;
    }
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("manifest: ") + e.what());
  }
}

/// Microphone recordings plus optional ground truth at target positions.
struct SignalDataset {
  Positions mics;
  Positions targets;
  Matrix mic_signals;     // M x T
  Matrix target_signals;  // P x T, or empty
  double sample_rate = 8000.0;

  void validate() const {
    if (mic_signals.rows() != static_cast<Index>(mics.size())) throw SchemaError("signal rows differ from mic count");
    if (target_signals.size() != 0 &&
        (target_signals.rows() != static_cast<Index>(targets.size()) || target_signals.cols() != mic_signals.cols()))
      throw SchemaError("target signals do not match the target table");
  }
};

inline constexpr const char* kSignalFormat = "stfield-signals";

inline void write_signal_dataset(const fs::path& dir, const SignalDataset& ds) {
  ds.validate();
  fs::create_directories(dir);
  nlohmann::json m;
  m["format"] = kSignalFormat;
  m["version"] = 1;
  m["sample_rate"] = ds.sample_rate;
  m["samples"] = ds.mic_signals.cols();
  m["mic_positions"] = positions_to_json(ds.mics);
  m["target_positions"] = positions_to_json(ds.targets);
  // Row-major: all samples of channel 0, then channel 1, ...
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> mic = ds.mic_signals;
  write_f64(dir / "mics.f64", mic.data(), static_cast<std::size_t>(mic.size()));
  m["mic_file"] = "mics.f64";
  if (ds.target_signals.size() != 0) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> tgt = ds.target_signals;
    write_f64(dir / "targets.f64", tgt.data(), static_cast<std::size_t>(tgt.size()));
    m["target_file"] = "targets.f64";
  }
  write_json(dir / "manifest.json", m);
}

inline SignalDataset load_signal_dataset(const fs::path& dir) {
  const auto m = read_json(dir / "manifest.json");
  try {
    if (m.at("format").get<std::string>() != kSignalFormat) throw SchemaError("unknown dataset format");
    SignalDataset ds;
    ds.sample_rate = m.at("sample_rate").get<double>();
    const auto samples = m.at("samples").get<Index>();
    ds.mics = positions_from_json(m.at("mic_positions"), "mic_positions");
    ds.targets = positions_from_json(m.at("target_positions"), "target_positions");
    auto load = [&](const std::string& file, Index rows) {
      const auto raw = read_f64(dir / file);
      if (static_cast<Index>(raw.size()) != rows * samples) throw SchemaError(file + " has the wrong size");
      return Matrix(Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          raw.data(), rows, samples));
    };
    ds.mic_signals = load(m.at("mic_file").get<std::string>(), static_cast<Index>(ds.mics.size()));
    if (m.contains("target_file"))
      ds.target_signals = load(m.at("target_file").get<std::string>(), static_cast<Index>(ds.targets.size()));
    ds.validate();
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("manifest: ") + e.what());
  }
}

}  // namespace stfield
