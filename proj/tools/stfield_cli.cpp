// stfield: simulate, reconstruct, select, sweep and kernel-dump.

#include "stfield/stfield.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <optional>

namespace {

using namespace stfield;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool config_required) {
  auto* opt = cmd->add_option("-c,--config", f.config, "Experiment config (JSON)");
  if (config_required) opt->required();
  cmd->add_option("-s,--seed", f.seed, "Override the config seed");
  cmd->add_option("-o,--output-dir", f.output_dir, "Override the config output directory");
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig cfg = f.config.empty() ? parse_config(json::object()) : load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.output_dir.empty()) cfg.output_dir = f.output_dir;
  return cfg;
}

int cmd_simulate(const CommonFlags& f, Index trial, bool write_rirs) {
  const auto cfg = resolve(f);
  const Geometry geo = cfg.geometry();
  const auto data = simulate_trial(cfg, geo, trial);
  SignalDataset ds;
  ds.mics = geo.mics;
  ds.targets = geo.targets;
  ds.mic_signals = noisy_mics(cfg, data, cfg.snr_db, trial);
  ds.target_signals = data.targets;
  ds.sample_rate = cfg.medium.fs;
  write_signal_dataset(cfg.output_dir, ds);
  if (write_rirs) {
    if (cfg.simulator.kind != SimKind::Room || !cfg.simulator.fixed_source)
      throw SchemaError("--write-rirs needs a room simulator with a fixed source");
    RirDataset rd;
    rd.mics = geo.mics;
    rd.validation = geo.targets;
    rd.sample_rate = cfg.medium.fs;
    for (const auto& p : geo.mics) rd.mic_rirs.push_back(image_source_rir(cfg.simulator.room, p, cfg.medium));
    for (const auto& p : geo.targets) rd.validation_rirs.push_back(image_source_rir(cfg.simulator.room, p, cfg.medium));
    Index len = 0;
    for (const auto* set : {&rd.mic_rirs, &rd.validation_rirs})
      for (const auto& h : *set) len = std::max(len, h.size());
    for (auto* set : {&rd.mic_rirs, &rd.validation_rirs})
      for (auto& h : *set) h.conservativeResizeLike(Vector::Zero(len));
    write_rir_dataset(fs::path(cfg.output_dir) / "rirs", rd);
  }
  std::printf("wrote %lld mic and %lld target channels of %lld samples to %s\n",
              static_cast<long long>(geo.num_mics()), static_cast<long long>(geo.num_targets()),
              static_cast<long long>(cfg.samples), cfg.output_dir.c_str());
  return kExitOk;
}

int cmd_reconstruct(const CommonFlags& f, const std::string& dataset, const std::string& method, Index window,
                    std::optional<double> sigma2) {
  auto cfg = resolve(f);
  const auto ds = load_signal_dataset(dataset);
  const Geometry geo{ds.mics, ds.targets, window};
  geo.validate();
  MethodSpec spec{parse_method(method), window, cfg.trunc_grid};
  std::optional<CovarianceSet> cov;
  if (model_based(spec.method)) {
    const KernelModel model = KernelModel::make(cfg.medium, cfg.spectrum(), cfg.model_radius, cfg.model_nodes,
                                                centroid(ds.mics));
    cov = build_covariance_set(model, geo.with_window(effective_window(spec)));
  }
  MethodInputs in;
  in.signals = &ds.mic_signals;
  in.geo = &geo;
  in.cov = cov ? &*cov : nullptr;
  in.freq = cfg.freq();
  const auto grid = sigma2 ? std::vector<double>{*sigma2} : cfg.cv_grid();
  const auto out = tune_and_reconstruct(spec, in, grid);

  fs::create_directories(cfg.output_dir);
  CsvTable t;
  t.header = {"sample"};
  for (Index p = 0; p < geo.num_targets(); ++p) t.header.push_back("p" + std::to_string(p));
  for (Index n = 0; n < out.rec.mean.cols(); ++n) {
    CsvRow row{std::to_string(n)};
    for (Index p = 0; p < geo.num_targets(); ++p) row.push_back(format_number(out.rec.mean(p, n)));
    t.rows.push_back(std::move(row));
  }
  write_csv(fs::path(cfg.output_dir) / "reconstruction.csv", t);
  json summary{{"method", method}, {"window", window}, {"sigma2", out.sigma2},
               {"first_valid", out.rec.first_valid}, {"end_valid", out.rec.end_valid}};
  if (ds.target_signals.size() != 0 && ds.mic_signals.cols() > 2 * cfg.trim)
    summary["nmse_db"] = nmse_db(out.rec, ds.target_signals, cfg.trim);
  write_json(fs::path(cfg.output_dir) / "reconstruction.json", summary);
  std::cout << summary.dump() << '\n';
  return kExitOk;
}

int cmd_select(const CommonFlags& f, Index window, Index budget, double sigma2) {
  const auto cfg = resolve(f);
  const Geometry geo = cfg.geometry().with_window(window);
  const auto cov = build_covariance_set(cfg.model(), geo);
  const auto res = select(cov, sigma2, budget, cfg.selection.options);
  fs::create_directories(cfg.output_dir);
  CsvTable t;
  t.header = {"mic", "lag", "selected", "relaxed_score"};
  for (Index i = 0; i < res.mask.size(); ++i)
    t.rows.push_back({std::to_string(geo.mic_of(i)), std::to_string(geo.lag_of(i)),
                      res.mask.weights[i] > 0.5 ? "1" : "0", format_number(res.relaxed_scores[i])});
  write_csv(fs::path(cfg.output_dir) / "mask.csv", t);
  json summary{{"window", window}, {"budget", budget}, {"sigma2", sigma2}, {"objective", res.objective},
               {"prior_trace", cov.Kuu.trace()}, {"order", res.order}};
  write_json(fs::path(cfg.output_dir) / "selection.json", summary);
  std::printf("objective %.12g (prior trace %.12g)\n", res.objective, cov.Kuu.trace());
  return kExitOk;
}

int cmd_sweep(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const auto result = run_sweep(cfg);
  write_sweep(cfg, result);
  std::printf("%lld evaluations, %lld failed; tables in %s\n", static_cast<long long>(result.evaluations),
              static_cast<long long>(result.failures), cfg.output_dir.c_str());
  if (result.failure_rate() > kMaxFailureRate) {
    std::fprintf(stderr, "error: %.1f%% of trials failed\n", 100.0 * result.failure_rate());
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_kernel_dump(const CommonFlags& f, std::optional<double> radius, std::optional<Index> nodes, double max_dist,
                    Index steps, std::vector<double> freqs) {
  auto cfg = resolve(f);
  if (radius) cfg.model_radius = *radius;
  if (nodes) cfg.model_nodes = *nodes;
  const KernelModel model = cfg.model();
  fs::create_directories(cfg.output_dir);
  CsvTable coh;
  coh.header = {"distance", "frequency_hz", "coherence_real", "coherence_imag", "sinc", "abs_error"};
  for (double fr : freqs) {
    const double omega = 2.0 * std::numbers::pi * fr;
    for (Index i = 0; i <= steps; ++i) {
      const double d = max_dist * static_cast<double>(i) / static_cast<double>(steps);
      const Vec3 a = cfg.array_center - Vec3(0.5 * d, 0.0, 0.0);
      const Vec3 b = cfg.array_center + Vec3(0.5 * d, 0.0, 0.0);
      const auto g = normalized_coherence(model, a, b, omega);
      const double s = coherence_diffuse(d, omega, cfg.medium.c);
      coh.rows.push_back({format_number(d), format_number(fr), format_number(g.real()), format_number(g.imag()),
                          format_number(s), format_number(std::abs(g - s))});
    }
  }
  write_csv(fs::path(cfg.output_dir) / "coherence.csv", coh);

  const Geometry geo = cfg.geometry();
  CsvTable cov;
  cov.header = {"mic_a", "mic_b", "lag", "covariance"};
  for (Index a = 0; a < geo.num_mics(); ++a)
    for (Index b = a; b < geo.num_mics(); ++b) {
      const Vector table = model.lag_table(model.node_distances(geo.mics[static_cast<std::size_t>(a)]),
                                           model.node_distances(geo.mics[static_cast<std::size_t>(b)]),
                                           -(cfg.window - 1), cfg.window - 1);
      for (Index l = 0; l < table.size(); ++l)
        cov.rows.push_back({std::to_string(a), std::to_string(b), std::to_string(l - (cfg.window - 1)),
                            format_number(table[l])});
    }
  write_csv(fs::path(cfg.output_dir) / "covariance.csv", cov);
  std::printf("wrote coherence.csv and covariance.csv to %s\n", cfg.output_dir.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal sound field reconstruction toolkit"};
  app.require_subcommand(1);

  CommonFlags sim_f, rec_f, sel_f, sweep_f, dump_f;

  auto* sim = app.add_subcommand("simulate", "Simulate one trial and write a signal dataset");
  add_common(sim, sim_f, false);
  Index sim_trial = 0;
  bool sim_rirs = false;
  sim->add_option("--trial", sim_trial, "Trial index (selects the RNG stream)")->check(CLI::NonNegativeNumber);
  sim->add_flag("--write-rirs", sim_rirs, "Also write the room RIRs as an RIR container under <output-dir>/rirs");

  auto* rec = app.add_subcommand("reconstruct", "Run one method on a signal dataset");
  add_common(rec, rec_f, false);
  std::string rec_dataset, rec_method = "spatio_temporal";
  Index rec_window = 10;
  std::optional<double> rec_sigma2;
  rec->add_option("-d,--dataset", rec_dataset, "Signal dataset directory")->required();
  rec->add_option("-m,--method", rec_method,
                  "spatio_temporal, spatial, fd_krr_full, fd_krr_causal, fd_krr_noncausal or fd_krr_trunc");
  rec->add_option("-w,--window", rec_window, "Window length W")->check(CLI::PositiveNumber);
  rec->add_option("--sigma2", rec_sigma2, "Fixed noise/ridge parameter (default: cross-validated)")
      ->check(CLI::PositiveNumber);

  auto* sel = app.add_subcommand("select", "Choose K window samples and write the mask");
  add_common(sel, sel_f, false);
  Index sel_window = 20, sel_budget = 40;
  double sel_sigma2 = 1e-3;
  sel->add_option("-w,--window", sel_window, "Window length W")->check(CLI::PositiveNumber);
  sel->add_option("-k,--budget", sel_budget, "Number of samples to keep")->check(CLI::PositiveNumber);
  sel->add_option("--sigma2", sel_sigma2, "Noise variance")->check(CLI::PositiveNumber);

  auto* sweep = app.add_subcommand("sweep", "Run the configured Monte Carlo sweeps and write CSV tables");
  add_common(sweep, sweep_f, true);

  auto* dump = app.add_subcommand("kernel-dump", "Write model coherence and covariance tables");
  add_common(dump, dump_f, false);
  std::optional<double> dump_radius;
  std::optional<Index> dump_nodes;
  double dump_max = 0.2;
  Index dump_steps = 40;
  std::vector<double> dump_freqs{100.0, 300.0, 500.0, 1000.0};
  dump->add_option("--radius", dump_radius, "Model sphere radius a in m")->check(CLI::PositiveNumber);
  dump->add_option("--nodes", dump_nodes, "Quadrature nodes Q")->check(CLI::PositiveNumber);
  dump->add_option("--max-distance", dump_max, "Largest pair distance in m")->check(CLI::PositiveNumber);
  dump->add_option("--steps", dump_steps, "Distance steps")->check(CLI::PositiveNumber);
  dump->add_option("--freqs", dump_freqs, "Frequencies in Hz (within the band)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sim) return cmd_simulate(sim_f, sim_trial, sim_rirs);
    if (*rec) return cmd_reconstruct(rec_f, rec_dataset, rec_method, rec_window, rec_sigma2);
    if (*sel) return cmd_select(sel_f, sel_window, sel_budget, sel_sigma2);
    if (*sweep) return cmd_sweep(sweep_f);
    if (*dump) return cmd_kernel_dump(dump_f, dump_radius, dump_nodes, dump_max, dump_steps, dump_freqs);
  } catch (const SchemaError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const ModelError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
