#pragma once

#include "stfield/csv.hpp"
#include "stfield/cv.hpp"
#include "stfield/io.hpp"
#include "stfield/metrics.hpp"
#include "stfield/selection.hpp"
#include "stfield/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

namespace stfield {

using json = nlohmann::json;

enum class SimKind { Diffuse, Room, Rir };

struct SimulatorConfig {
  SimKind kind = SimKind::Diffuse;
  Index directions = 1000;
  double radius = 5.0;
  RoomSpec room;
  double wall_margin = 0.3;
  bool fixed_source = false;
  std::string rir_path;
};

struct SelectionConfig {
  bool enabled = false;
  Index window = 20;
  std::vector<Index> budgets;
  std::vector<std::string> strategies{"proposed", "random", "recent"};
  SelectOptions options;
};

struct SweepGrids {
  std::vector<Index> W;
  std::vector<double> snr_db;
  std::vector<double> radius;
  std::vector<Index> nodes;
  bool validation_distance = false;
};

struct ExperimentConfig {
  MediumParams medium;
  double f_lo = 70.0;
  double f_hi = 1000.0;
  double q = 1.0;
  double model_radius = 5.0;
  Index model_nodes = 1000;
  Index array_mics = 8;
  double array_radius = 0.10;
  Vec3 array_center{1.5, 1.3, 1.2};
  double target_radius = 0.05;
  double target_spacing = 0.01;
  SimulatorConfig simulator;
  Index samples = 2000;
  Index trim = 200;
  double snr_db = 20.0;
  Index window = 10;
  Index trunc_grid = 0;
  std::vector<Method> methods{Method::SpatioTemporal, Method::Spatial, Method::FdKrrFull, Method::FdKrrCausal};
  Index cv_count = 20;
  double cv_min = 1e-9;
  double cv_max = 1.0;
  SweepGrids sweeps;
  SelectionConfig selection;
  Index trials = 10;
  std::uint64_t seed = 1;
  std::string output_dir = "results";
  bool record_timings = false;

  SourceSpectrum spectrum() const { return SourceSpectrum::from_hz(f_lo, f_hi, q); }
  FreqKernelConfig freq() const { return {f_lo, f_hi, 1e-3, medium}; }
  std::vector<double> cv_grid() const { return log_grid(cv_count, cv_min, cv_max); }
  KernelModel model(double radius, Index nodes) const {
    return KernelModel::make(medium, spectrum(), radius, nodes, array_center);
  }
  KernelModel model() const { return model(model_radius, model_nodes); }

  /// Microphones and targets; an RIR dataset supplies its own positions.
  Geometry geometry() const {
    if (simulator.kind == SimKind::Rir) {
      const auto ds = load_rir_dataset(simulator.rir_path, medium.fs);
      return Geometry{ds.mics, ds.validation, window};
    }
    return Geometry{circular_array(array_mics, array_radius, array_center),
                    disc_grid(target_radius, target_spacing, array_center), window};
  }

  void validate() const {
    medium.validate();
    spectrum().validate();
    require(q > 0.0, "q must be positive");
    require(model_radius > 0.0 && model_nodes >= 1, "model sphere needs a positive radius and nodes");
    require(samples > 2 * trim && trim >= 0, "samples must exceed twice the trim");
    require(window >= 1, "window must be at least one");
    require(trials >= 1, "trials must be at least one");
    require(cv_count >= 1 && cv_min > 0.0 && cv_max >= cv_min, "invalid cross-validation grid");
    require(!methods.empty(), "method list must not be empty");
    require(array_mics >= 2, "cross-validation needs at least two microphones");
    for (Index w : sweeps.W) require(w >= 1, "W grid values must be positive");
    for (double a : sweeps.radius) require(a > array_radius, "model radius must enclose the array");
    for (Index n : sweeps.nodes) require(n >= 1, "node grid values must be positive");
    if (selection.enabled) {
      require(!selection.budgets.empty(), "selection budgets must not be empty");
      for (Index k : selection.budgets)
        require(k >= 1 && k <= array_mics * selection.window, "budget must lie in [1, M W]");
      for (const auto& s : selection.strategies)
        require(s == "proposed" || s == "random" || s == "recent", "unknown selection strategy");
    }
    if (simulator.kind == SimKind::Room) simulator.room.validate();
    if (simulator.kind == SimKind::Diffuse)
      require(simulator.directions >= 1 && simulator.radius > array_radius, "invalid diffuse simulator");
  }

  bool has_sweep() const {
    return !sweeps.W.empty() || !sweeps.snr_db.empty() || !sweeps.radius.empty() || !sweeps.nodes.empty() ||
           sweeps.validation_distance || selection.enabled;
  }
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) throw SchemaError(std::string(where) + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw SchemaError(std::string("unknown key '") + k + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

inline Vec3 read_vec3(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw SchemaError(std::string(what) + " must be [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

/// SNR in dB; "inf" or null means noise free.
inline double read_snr(const json& v) {
  if (v.is_null()) return std::numeric_limits<double>::infinity();
  if (v.is_string()) {
    if (v.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
    throw SchemaError("SNR strings other than \"inf\" are not allowed");
  }
  return v.get<double>();
}

template <class T>
std::vector<T> read_grid(const json& j, const char* key) {
  const auto v = j.at(key).get<std::vector<T>>();
  if (v.empty()) throw SchemaError(std::string("grid '") + key + "' must not be empty");
  return v;
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  using namespace detail;
  ExperimentConfig c;
  try {
    check_keys(j,
               {"medium", "band_hz", "q", "model", "array", "targets", "simulator", "samples", "trim", "snr_db",
                "window", "trunc_grid", "methods", "cv", "sweeps", "selection", "trials", "seed", "output_dir",
                "record_timings"},
               "config");
    if (j.contains("medium")) {
      check_keys(j["medium"], {"c", "fs"}, "medium");
      read(j["medium"], "c", c.medium.c);
      read(j["medium"], "fs", c.medium.fs);
    }
    if (j.contains("band_hz")) {
      const auto b = j["band_hz"].get<std::vector<double>>();
      if (b.size() != 2) throw SchemaError("band_hz must be [f_lo, f_hi]");
      c.f_lo = b[0];
      c.f_hi = b[1];
    }
    read(j, "q", c.q);
    if (j.contains("model")) {
      check_keys(j["model"], {"radius", "nodes"}, "model");
      read(j["model"], "radius", c.model_radius);
      read(j["model"], "nodes", c.model_nodes);
    }
    if (j.contains("array")) {
      check_keys(j["array"], {"mics", "radius", "center"}, "array");
      read(j["array"], "mics", c.array_mics);
      read(j["array"], "radius", c.array_radius);
      if (j["array"].contains("center")) c.array_center = read_vec3(j["array"]["center"], "array.center");
    }
    if (j.contains("targets")) {
      check_keys(j["targets"], {"radius", "spacing"}, "targets");
      read(j["targets"], "radius", c.target_radius);
      read(j["targets"], "spacing", c.target_spacing);
    }
    if (j.contains("simulator")) {
      const auto& s = j["simulator"];
      check_keys(s, {"kind", "directions", "radius", "room", "path"}, "simulator");
      const auto kind = s.value("kind", std::string("diffuse"));
      if (kind == "diffuse") c.simulator.kind = SimKind::Diffuse;
      else if (kind == "room") c.simulator.kind = SimKind::Room;
      else if (kind == "rir") c.simulator.kind = SimKind::Rir;
      else throw SchemaError("simulator.kind must be diffuse, room or rir");
      read(s, "directions", c.simulator.directions);
      read(s, "radius", c.simulator.radius);
      read(s, "path", c.simulator.rir_path);
      if (s.contains("room")) {
        const auto& r = s["room"];
        check_keys(r, {"dims", "beta", "max_order", "discard", "wall_margin", "source"}, "simulator.room");
        if (r.contains("dims")) c.simulator.room.dims = read_vec3(r["dims"], "room.dims");
        read(r, "beta", c.simulator.room.beta);
        read(r, "max_order", c.simulator.room.max_order);
        read(r, "discard", c.simulator.room.discard);
        read(r, "wall_margin", c.simulator.wall_margin);
        if (r.contains("source")) {
          c.simulator.room.source = read_vec3(r["source"], "room.source");
          c.simulator.fixed_source = true;
        }
      }
      if (c.simulator.kind == SimKind::Rir && c.simulator.rir_path.empty())
        throw SchemaError("simulator.path is required for kind rir");
    }
    read(j, "samples", c.samples);
    read(j, "trim", c.trim);
    if (j.contains("snr_db")) c.snr_db = read_snr(j["snr_db"]);
    read(j, "window", c.window);
    read(j, "trunc_grid", c.trunc_grid);
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j["methods"]) c.methods.push_back(parse_method(m.get<std::string>()));
    }
    if (j.contains("cv")) {
      check_keys(j["cv"], {"count", "min", "max"}, "cv");
      read(j["cv"], "count", c.cv_count);
      read(j["cv"], "min", c.cv_min);
      read(j["cv"], "max", c.cv_max);
    }
    if (j.contains("sweeps")) {
      const auto& s = j["sweeps"];
      check_keys(s, {"W", "snr_db", "radius", "nodes", "validation_distance"}, "sweeps");
      if (s.contains("W")) c.sweeps.W = read_grid<Index>(s, "W");
      if (s.contains("snr_db")) {
        if (!s["snr_db"].is_array() || s["snr_db"].empty()) throw SchemaError("grid 'snr_db' must not be empty");
        for (const auto& v : s["snr_db"]) c.sweeps.snr_db.push_back(read_snr(v));
      }
      if (s.contains("radius")) c.sweeps.radius = read_grid<double>(s, "radius");
      if (s.contains("nodes")) c.sweeps.nodes = read_grid<Index>(s, "nodes");
      read(s, "validation_distance", c.sweeps.validation_distance);
    }
    if (j.contains("selection")) {
      const auto& s = j["selection"];
      check_keys(s, {"window", "budgets", "strategies", "rho", "iters", "epsilon"}, "selection");
      c.selection.enabled = true;
      read(s, "window", c.selection.window);
      c.selection.budgets = read_grid<Index>(s, "budgets");
      read(s, "strategies", c.selection.strategies);
      read(s, "rho", c.selection.options.rho);
      read(s, "iters", c.selection.options.iters);
      read(s, "epsilon", c.selection.options.epsilon);
    }
    read(j, "trials", c.trials);
    read(j, "seed", c.seed);
    read(j, "output_dir", c.output_dir);
    read(j, "record_timings", c.record_timings);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("config: ") + e.what());
  }
  try {
    c.validate();
  } catch (const ModelError& e) {
    throw SchemaError(std::string("config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw SchemaError("config file not found: " + path.string());
  return parse_config(read_json(path));
}

/// SplitMix64 finalizer over (seed, tag, a, b).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t x = seed;
  for (std::uint64_t v : {tag, a, b}) {
    x += 0x9e3779b97f4a7c15ULL + v;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    x ^= x >> 31;
  }
  return x;
}

enum SeedTag : std::uint64_t { kTagField = 1, kTagNoise = 2, kTagSource = 3, kTagRandomMask = 4 };

/// Clean field at the microphones and targets for one trial.
struct TrialData {
  Matrix mics;     // M x T
  Matrix targets;  // P x T
};

inline TrialData simulate_trial(const ExperimentConfig& cfg, const Geometry& geo, Index trial) {
  const std::uint64_t seed = derive_seed(cfg.seed, kTagField, static_cast<std::uint64_t>(trial));
  Positions all = geo.mics;
  all.insert(all.end(), geo.targets.begin(), geo.targets.end());
  Matrix field;
  if (cfg.simulator.kind == SimKind::Diffuse) {
    DiffuseSpec spec;
    spec.n_dirs = cfg.simulator.directions;
    spec.radius = cfg.simulator.radius;
    spec.seed = seed;
    spec.center = cfg.array_center;
    spec.q = cfg.q;
    field = simulate_diffuse(spec, ExcitationSpec{cfg.samples, cfg.f_lo, cfg.f_hi, seed}, all, cfg.medium);
  } else {
    std::vector<Vector> rirs;
    Index discard = cfg.simulator.room.discard;
    if (cfg.simulator.kind == SimKind::Room) {
      RoomSpec room = cfg.simulator.room;
      if (!cfg.simulator.fixed_source) {
        auto rng = make_rng(derive_seed(cfg.seed, kTagSource, static_cast<std::uint64_t>(trial)));
        room.source = sample_source_position(room.dims, cfg.simulator.wall_margin, rng);
      }
      for (const auto& p : all) rirs.push_back(image_source_rir(room, p, cfg.medium));
    } else {
      const auto ds = load_rir_dataset(cfg.simulator.rir_path, cfg.medium.fs);
      rirs = ds.mic_rirs;
      rirs.insert(rirs.end(), ds.validation_rirs.begin(), ds.validation_rirs.end());
    }
    Index longest = 0;
    for (const auto& h : rirs) longest = std::max(longest, h.size());
    const Vector exc = bandlimited_noise(ExcitationSpec{cfg.samples + discard + longest, cfg.f_lo, cfg.f_hi, seed},
                                         cfg.medium.fs);
    field = render_rirs(rirs, exc, cfg.samples, discard);
    // Same pooled microphone variance as the prior, q / (4 pi).
    const double var = pooled_variance(field.topRows(geo.num_mics()));
    require(var > 0.0, "room simulation produced a silent array");
    field *= std::sqrt(cfg.q / (4.0 * std::numbers::pi) / var);
  }
  return {field.topRows(geo.num_mics()), field.bottomRows(geo.num_targets())};
}

inline Matrix noisy_mics(const ExperimentConfig& cfg, const TrialData& data, double snr_db, Index trial) {
  return add_noise_snr(data.mics, snr_db, derive_seed(cfg.seed, kTagNoise, static_cast<std::uint64_t>(trial)));
}

/// Worker count from STFIELD_WORKERS (default 1).
inline unsigned worker_count() {
  if (const char* env = std::getenv("STFIELD_WORKERS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  return 1;
}

/// Runs fn(i) for i in [0, n) on a pool; results must be written by index.
inline void parallel_for(Index n, unsigned workers, const std::function<void(Index)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < std::min<unsigned>(workers, static_cast<unsigned>(n)); ++w) {
    pool.emplace_back([&] {
      for (Index i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// One scored reconstruction.
struct Evaluation {
  bool ok = false;
  double nmse_db = std::numeric_limits<double>::quiet_NaN();
  double sigma2 = std::numeric_limits<double>::quiet_NaN();
  double trace = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
  std::string error;
};

inline Evaluation evaluate_method(const ExperimentConfig& cfg, const MethodSpec& spec, const Matrix& mics,
                                  const Matrix& truth, const Geometry& geo, const CovarianceSet* cov) {
  Evaluation ev;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    MethodInputs in;
    in.signals = &mics;
    in.geo = &geo;
    in.cov = cov;
    in.freq = cfg.freq();
    const auto out = tune_and_reconstruct(spec, in, cfg.cv_grid());
    ev.nmse_db = nmse_db(out.rec, truth, cfg.trim);
    ev.sigma2 = out.sigma2;
    if (out.rec.variance.size() > 0) ev.trace = out.rec.variance.sum();
    ev.ok = std::isfinite(ev.nmse_db);
  } catch (const std::exception& e) {
    ev.ok = false;
    ev.error = e.what();
  }
  ev.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return ev;
}

/// Trial rows plus the aggregate table for one sweep.
struct SweepTables {
  CsvTable aggregate;
  CsvTable trials;
};

struct SweepResult {
  std::map<std::string, CsvTable> tables;  // file stem -> table
  CsvTable timings;
  Index evaluations = 0;
  Index failures = 0;
  double failure_rate() const { return evaluations ? static_cast<double>(failures) / static_cast<double>(evaluations) : 0.0; }
};

inline constexpr double kMaxFailureRate = 0.10;

namespace detail {

/// Keyed cache of covariance sets; filled before the parallel trial loop.
class CovarianceCache {
 public:
  const CovarianceSet& get(const ExperimentConfig& cfg, const Geometry& geo, double radius, Index nodes, Index window) {
    const auto key = std::make_tuple(radius, nodes, window);
    auto it = cache_.find(key);
    if (it == cache_.end())
      it = cache_.emplace(key, build_covariance_set(cfg.model(radius, nodes), geo.with_window(window))).first;
    return it->second;
  }

 private:
  std::map<std::tuple<double, Index, Index>, CovarianceSet> cache_;
};

struct GridPoint {
  std::string label;  // value in the grid column
  MethodSpec spec;
  std::string method;  // row label
  double snr_db = 0.0;
  const CovarianceSet* cov = nullptr;
};

/// Evaluates every grid point for every trial and aggregates by grid point.
inline void run_points(const ExperimentConfig& cfg, const Geometry& geo, const std::vector<TrialData>& data,
                       const std::string& sweep, const std::string& column, const std::vector<GridPoint>& points,
                       SweepResult& result) {
  const auto trials = static_cast<Index>(data.size());
  std::vector<Evaluation> evals(points.size() * data.size());
  // Noisy observations depend only on (trial, SNR); build them once per pair.
  std::set<double> snrs;
  for (const auto& p : points) snrs.insert(p.snr_db);
  parallel_for(trials, worker_count(), [&](Index t) {
    std::map<double, Matrix> noisy;
    for (double s : snrs) noisy.emplace(s, noisy_mics(cfg, data[static_cast<std::size_t>(t)], s, t));
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto& p = points[i];
      evals[i * data.size() + static_cast<std::size_t>(t)] =
          evaluate_method(cfg, p.spec, noisy.at(p.snr_db), data[static_cast<std::size_t>(t)].targets, geo, p.cov);
    }
  });

  SweepTables tables;
  tables.aggregate.header = {column, "method", "n_valid", "nmse_db_mean", "nmse_db_ci_lo", "nmse_db_ci_hi", "sigma2_median"};
  tables.trials.header = {column, "method", "trial", "status", "nmse_db", "sigma2"};
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::vector<double> vals;
    std::vector<double> sig;
    for (Index t = 0; t < trials; ++t) {
      const auto& ev = evals[i * data.size() + static_cast<std::size_t>(t)];
      ++result.evaluations;
      if (ev.ok) {
        vals.push_back(ev.nmse_db);
        sig.push_back(ev.sigma2);
      } else {
        ++result.failures;
      }
      tables.trials.rows.push_back({points[i].label, points[i].method, std::to_string(t), ev.ok ? "ok" : "failed",
                                    format_number(ev.nmse_db), format_number(ev.sigma2)});
      if (cfg.record_timings)
        result.timings.rows.push_back(
            {sweep, points[i].label, points[i].method, std::to_string(t), format_number(ev.seconds)});
    }
    Interval ci{std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN(),
                std::numeric_limits<double>::quiet_NaN()};
    if (vals.size() >= 2) ci = confidence_interval(vals);
    else if (vals.size() == 1) ci = {vals[0], vals[0], vals[0]};
    double med = std::numeric_limits<double>::quiet_NaN();
    if (!sig.empty()) {
      std::sort(sig.begin(), sig.end());
      med = sig[sig.size() / 2];
    }
    tables.aggregate.rows.push_back({points[i].label, points[i].method, std::to_string(vals.size()),
                                     format_number(ci.mean), format_number(ci.lo), format_number(ci.hi),
                                     format_number(med)});
  }
  result.tables[sweep] = std::move(tables.aggregate);
  result.tables[sweep + "_trials"] = std::move(tables.trials);
}

inline std::string index_label(Index v) { return std::to_string(v); }

}  // namespace detail

/// Selection sweep over budgets: proposed, random and recent masks at a fixed
/// window, sigma2 from the full-window spatio-temporal CV of each trial.
inline void run_selection_sweep(const ExperimentConfig& cfg, const Geometry& geo, const std::vector<TrialData>& data,
                                const CovarianceSet& cov, SweepResult& result) {
  const Geometry g = geo.with_window(cfg.selection.window);
  const auto trials = static_cast<Index>(data.size());
  const auto& budgets = cfg.selection.budgets;
  const auto& strategies = cfg.selection.strategies;
  const std::size_t per_trial = budgets.size() * strategies.size();
  std::vector<Evaluation> evals(per_trial * data.size());
  std::vector<std::vector<std::optional<SelectionMask>>> masks(
      data.size(), std::vector<std::optional<SelectionMask>>(budgets.size()));

  parallel_for(trials, worker_count(), [&](Index t) {
    const auto& d = data[static_cast<std::size_t>(t)];
    const Matrix y = noisy_mics(cfg, d, cfg.snr_db, t);
    double sigma2 = std::numeric_limits<double>::quiet_NaN();
    try {
      sigma2 = cv_spatio_temporal(cov.Kyy, y, g.window, cfg.cv_grid()).sigma2;
    } catch (const std::exception&) {
    }
    for (std::size_t b = 0; b < budgets.size(); ++b) {
      for (std::size_t s = 0; s < strategies.size(); ++s) {
        Evaluation ev;
        const auto t0 = std::chrono::steady_clock::now();
        try {
          require(std::isfinite(sigma2), "cross-validation failed");
          SelectionMask mask;
          if (strategies[s] == "proposed") {
            mask = select(cov, sigma2, budgets[b], cfg.selection.options).mask;
            masks[static_cast<std::size_t>(t)][b] = mask;
          } else if (strategies[s] == "random") {
            mask = random_selection(g.num_observations(), budgets[b],
                                    derive_seed(cfg.seed, kTagRandomMask, static_cast<std::uint64_t>(t),
                                                static_cast<std::uint64_t>(budgets[b])));
          } else {
            mask = recent_selection(g.num_mics(), g.window, budgets[b]);
          }
          const auto post = fit_subset(cov, sigma2, mask.selected());
          ev.nmse_db = nmse_db(reconstruct_stream(post, y, g), d.targets, cfg.trim);
          ev.trace = post.variance.sum();
          ev.sigma2 = sigma2;
          ev.ok = std::isfinite(ev.nmse_db);
        } catch (const std::exception& e) {
          ev.error = e.what();
        }
        ev.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        evals[static_cast<std::size_t>(t) * per_trial + b * strategies.size() + s] = ev;
      }
    }
  });

  CsvTable agg, rows;
  agg.header = {"budget", "method", "n_valid", "nmse_db_mean", "nmse_db_ci_lo", "nmse_db_ci_hi", "trace_mean"};
  rows.header = {"budget", "method", "trial", "status", "nmse_db", "sigma2", "trace"};
  for (std::size_t b = 0; b < budgets.size(); ++b) {
    for (std::size_t s = 0; s < strategies.size(); ++s) {
      std::vector<double> vals;
      double trace_sum = 0.0;
      for (Index t = 0; t < trials; ++t) {
        const auto& ev = evals[static_cast<std::size_t>(t) * per_trial + b * strategies.size() + s];
        ++result.evaluations;
        if (ev.ok) {
          vals.push_back(ev.nmse_db);
          trace_sum += ev.trace;
        } else {
          ++result.failures;
        }
        rows.rows.push_back({std::to_string(budgets[b]), strategies[s], std::to_string(t), ev.ok ? "ok" : "failed",
                             format_number(ev.nmse_db), format_number(ev.sigma2), format_number(ev.trace)});
        if (cfg.record_timings)
          result.timings.rows.push_back(
              {"nmse_vs_K", std::to_string(budgets[b]), strategies[s], std::to_string(t), format_number(ev.seconds)});
      }
      Interval ci{std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN(),
                  std::numeric_limits<double>::quiet_NaN()};
      if (vals.size() >= 2) ci = confidence_interval(vals);
      else if (vals.size() == 1) ci = {vals[0], vals[0], vals[0]};
      agg.rows.push_back({std::to_string(budgets[b]), strategies[s], std::to_string(vals.size()), format_number(ci.mean),
                          format_number(ci.lo), format_number(ci.hi),
                          format_number(vals.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                     : trace_sum / static_cast<double>(vals.size()))});
    }
  }
  result.tables["nmse_vs_K"] = std::move(agg);
  result.tables["nmse_vs_K_trials"] = std::move(rows);

  // Proposed masks: the first trial's pattern and mean counts per lag.
  const bool has_proposed = std::find(strategies.begin(), strategies.end(), "proposed") != strategies.end();
  if (!has_proposed) return;
  CsvTable pattern, per_lag;
  pattern.header = {"budget", "mic", "lag", "selected"};
  per_lag.header = {"budget", "lag", "mean_selected", "n_trials"};
  for (std::size_t b = 0; b < budgets.size(); ++b) {
    if (masks[0][b]) {
      const auto& m = *masks[0][b];
      for (Index i = 0; i < m.size(); ++i)
        pattern.rows.push_back({std::to_string(budgets[b]), std::to_string(g.mic_of(i)), std::to_string(g.lag_of(i)),
                                m.weights[i] > 0.5 ? "1" : "0"});
    }
    std::vector<double> sum(static_cast<std::size_t>(g.window), 0.0);
    Index n = 0;
    for (const auto& tm : masks) {
      if (!tm[b]) continue;
      const auto counts = selected_per_lag(*tm[b], g.num_mics());
      for (std::size_t l = 0; l < counts.size(); ++l) sum[l] += static_cast<double>(counts[l]);
      ++n;
    }
    for (Index l = 0; l < g.window; ++l)
      per_lag.rows.push_back({std::to_string(budgets[b]), std::to_string(l),
                              format_number(n ? sum[static_cast<std::size_t>(l)] / static_cast<double>(n)
                                              : std::numeric_limits<double>::quiet_NaN()),
                              std::to_string(n)});
  }
  result.tables["selection_patterns"] = std::move(pattern);
  result.tables["mics_per_lag"] = std::move(per_lag);
}

/// Per-target posterior variance against the empirical error variance of the
/// spatio-temporal estimator, with the target's distance from the array center.
inline void run_validation_distance(const ExperimentConfig& cfg, const Geometry& geo, const std::vector<TrialData>& data,
                                    const CovarianceSet& cov, SweepResult& result) {
  const auto trials = static_cast<Index>(data.size());
  const Index targets = geo.num_targets();
  Matrix post_var = Matrix::Constant(targets, trials, std::numeric_limits<double>::quiet_NaN());
  Matrix emp_var = post_var;
  std::vector<char> ok(static_cast<std::size_t>(trials), 0);
  parallel_for(trials, worker_count(), [&](Index t) {
    try {
      const auto& d = data[static_cast<std::size_t>(t)];
      const Matrix y = noisy_mics(cfg, d, cfg.snr_db, t);
      const double sigma2 = cv_spatio_temporal(cov.Kyy, y, cfg.window, cfg.cv_grid()).sigma2;
      const auto post = fit(cov, sigma2);
      const auto rec = reconstruct_stream(post, y, geo.with_window(cfg.window));
      const Index lo = std::max(cfg.trim, rec.first_valid);
      const Index hi = std::min(cfg.samples - cfg.trim, rec.end_valid);
      require(hi - lo >= 2, "scoring range too short");
      post_var.col(t) = post.variance;
      emp_var.col(t) = empirical_error_variance(rec.mean.middleCols(lo, hi - lo) - d.targets.middleCols(lo, hi - lo));
      ok[static_cast<std::size_t>(t)] = 1;
    } catch (const std::exception&) {
    }
  });
  CsvTable agg, rows;
  agg.header = {"target", "x", "y", "z", "distance", "n_valid", "posterior_var_mean", "empirical_var_mean"};
  rows.header = {"target", "distance", "trial", "status", "posterior_var", "empirical_var"};
  Index n_ok = 0;
  for (Index t = 0; t < trials; ++t) {
    result.evaluations += 1;
    if (ok[static_cast<std::size_t>(t)]) ++n_ok;
    else ++result.failures;
  }
  for (Index p = 0; p < targets; ++p) {
    const Vec3& r = geo.targets[static_cast<std::size_t>(p)];
    const double dist = (r - cfg.array_center).norm();
    double pv = 0.0, ev = 0.0;
    for (Index t = 0; t < trials; ++t) {
      const bool good = ok[static_cast<std::size_t>(t)];
      if (good) {
        pv += post_var(p, t);
        ev += emp_var(p, t);
      }
      rows.rows.push_back({std::to_string(p), format_number(dist), std::to_string(t), good ? "ok" : "failed",
                           format_number(post_var(p, t)), format_number(emp_var(p, t))});
    }
    const double n = static_cast<double>(n_ok);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    agg.rows.push_back({std::to_string(p), format_number(r.x()), format_number(r.y()), format_number(r.z()),
                        format_number(dist), std::to_string(n_ok), format_number(n_ok ? pv / n : nan),
                        format_number(n_ok ? ev / n : nan)});
  }
  result.tables["validation_distance"] = std::move(agg);
  result.tables["validation_distance_trials"] = std::move(rows);
}

/// All configured sweeps. Trials share one clean field per trial index.
inline SweepResult run_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  require(cfg.has_sweep(), "config defines no sweep");
  const Geometry geo = cfg.geometry();
  geo.validate();
  std::vector<TrialData> data(static_cast<std::size_t>(cfg.trials));
  parallel_for(cfg.trials, worker_count(),
               [&](Index t) { data[static_cast<std::size_t>(t)] = simulate_trial(cfg, geo, t); });

  SweepResult result;
  result.timings.header = {"sweep", "value", "method", "trial", "seconds"};
  detail::CovarianceCache cache;
  auto model_cov = [&](const MethodSpec& spec, double radius, Index nodes) -> const CovarianceSet* {
    if (!model_based(spec.method)) return nullptr;
    return &cache.get(cfg, geo, radius, nodes, effective_window(spec));
  };
  auto make_point = [&](std::string label, Method m, Index window, double snr, double radius, Index nodes) {
    detail::GridPoint p;
    p.label = std::move(label);
    p.spec = MethodSpec{m, window, cfg.trunc_grid};
    p.method = std::string(method_name(m));
    p.snr_db = snr;
    p.cov = model_cov(p.spec, radius, nodes);
    return p;
  };

  if (!cfg.sweeps.W.empty()) {
    std::vector<detail::GridPoint> pts;
    for (Index w : cfg.sweeps.W)
      for (Method m : cfg.methods) {
        if ((m == Method::FdKrrCausal || m == Method::FdKrrNonCausal) && w < 2) continue;
        pts.push_back(make_point(detail::index_label(w), m, w, cfg.snr_db, cfg.model_radius, cfg.model_nodes));
      }
    detail::run_points(cfg, geo, data, "nmse_vs_W", "W", pts, result);
  }
  if (!cfg.sweeps.snr_db.empty()) {
    std::vector<detail::GridPoint> pts;
    for (double s : cfg.sweeps.snr_db)
      for (Method m : cfg.methods)
        pts.push_back(make_point(format_number(s), m, cfg.window, s, cfg.model_radius, cfg.model_nodes));
    detail::run_points(cfg, geo, data, "nmse_vs_snr", "snr_db", pts, result);
  }
  if (!cfg.sweeps.radius.empty()) {
    std::vector<detail::GridPoint> pts;
    for (double a : cfg.sweeps.radius)
      for (Method m : cfg.methods)
        if (model_based(m)) pts.push_back(make_point(format_number(a), m, cfg.window, cfg.snr_db, a, cfg.model_nodes));
    detail::run_points(cfg, geo, data, "nmse_vs_a", "radius", pts, result);
  }
  if (!cfg.sweeps.nodes.empty()) {
    std::vector<detail::GridPoint> pts;
    for (Index q : cfg.sweeps.nodes)
      for (Method m : cfg.methods)
        if (model_based(m))
          pts.push_back(make_point(detail::index_label(q), m, cfg.window, cfg.snr_db, cfg.model_radius, q));
    detail::run_points(cfg, geo, data, "nmse_vs_Q", "nodes", pts, result);
  }
  if (cfg.selection.enabled)
    run_selection_sweep(cfg, geo, data, cache.get(cfg, geo, cfg.model_radius, cfg.model_nodes, cfg.selection.window),
                        result);
  if (cfg.sweeps.validation_distance)
    run_validation_distance(cfg, geo, data, cache.get(cfg, geo, cfg.model_radius, cfg.model_nodes, cfg.window),
                            result);
  return result;
}

/// Writes every table as <output_dir>/<name>.csv (timings only when enabled).
inline void write_sweep(const ExperimentConfig& cfg, const SweepResult& result) {
  fs::create_directories(cfg.output_dir);
  for (const auto& [name, table] : result.tables) write_csv(fs::path(cfg.output_dir) / (name + ".csv"), table);
  if (cfg.record_timings) write_csv(fs::path(cfg.output_dir) / "timings.csv", result.timings);
}

}  // namespace stfield
