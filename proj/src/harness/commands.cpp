#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "common.hpp"
#include "rnnda/errors.hpp"
#include "rnnda/io.hpp"
#include "rnnda/macro_training.hpp"
#include "rnnda/metrics.hpp"
#include "rnnda/parallel.hpp"

namespace rnnda::harness {

using detail::Stopwatch;

namespace detail {

l96::Dataset load_dataset(const Paths& out) {
  const auto train = out.data_dir() / "train.bin", test = out.data_dir() / "test.bin";
  if (!fs::exists(train) || !fs::exists(test))
    throw Error("dataset not found in " + out.data_dir().string() + " (run 'generate' first)");
  return {io::read_dataset(train), io::read_dataset(test)};
}

MacroParams configured_macro(const ExperimentConfig& cfg) {
  if (cfg.model.preset == "custom")
    return {.rho = cfg.model.rho, .sigma_in = cfg.model.sigma_in, .leak = cfg.model.leak,
            .beta = std::exp(cfg.model.log_beta)};
  return preset(cfg.model.preset).macro;
}

std::size_t configured_hidden_dim(const ExperimentConfig& cfg) {
  if (cfg.model.hidden_dim > 0) return cfg.model.hidden_dim;
  if (cfg.model.preset == "custom") throw InvalidArgument("config: model.hidden_dim is required for custom models");
  return preset(cfg.model.preset).hidden_dim;
}

LoadedModel load_model(const ExperimentConfig& cfg, const Paths& out) {
  LoadedModel m;
  if (cfg.model.kind == "l96") {
    m.forecaster = std::make_unique<da::L96Forecaster>(cfg.system.dim, cfg.system.dt, cfg.system.forcing);
    return m;
  }
  if (cfg.localized()) {
    const auto manifest = out.model_dir() / "local.json";
    if (!fs::exists(manifest)) throw Error("model not found: " + manifest.string() + " (run 'train' first)");
    m.local = std::make_unique<loc::LocalizedModel>(io::read_localized(manifest));
    m.forecaster = std::make_unique<loc::LocalizedModel>(*m.local);
    return m;
  }
  const auto file = out.model_dir() / "model.rnnda";
  if (!fs::exists(file)) throw Error("model not found: " + file.string() + " (run 'train' first)");
  m.rnn = std::make_unique<ReservoirModel>(io::read_model(file));
  if (!m.rnn->trained()) throw NotTrained(file.string() + " has no trained readout");
  m.forecaster = std::make_unique<da::RnnForecaster>(*m.rnn);
  return m;
}

void write_lines(const fs::path& path, const std::vector<std::string>& comments, const std::string& header,
                 const std::vector<std::string>& rows) {
  io::ensure_parent(path);
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  for (const auto& c : comments) f << "# " << c << '\n';
  f << header << '\n';
  for (const auto& r : rows) f << r << '\n';
}

}  // namespace detail

std::vector<std::string> provenance(const ExperimentConfig& cfg, const std::string& verb) {
  std::vector<std::string> lines{"rnnda " + verb, "seed = " + std::to_string(cfg.seed)};
  std::istringstream is(cfg.to_ini());
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return lines;
}

namespace {

nlohmann::json macro_json(const MacroParams& p) {
  return {{"rho", p.rho}, {"sigma_in", p.sigma_in}, {"leak", p.leak}, {"beta", p.beta}, {"log_beta", std::log(p.beta)}};
}

nlohmann::json sidecar(const ExperimentConfig& cfg, const std::string& verb) {
  return {{"verb", verb}, {"seed", cfg.seed}, {"config", cfg.to_json()}};
}

}  // namespace

Status cmd_generate(const ExperimentConfig& cfg, const Paths& out) {
  cfg.validate();
  Stopwatch sw;
  const auto ds = l96::generate_dataset({.dim = cfg.system.dim,
                                         .forcing = cfg.system.forcing,
                                         .dt = cfg.system.dt,
                                         .spinup_steps = cfg.data.spinup_steps,
                                         .train_steps = cfg.data.train_steps,
                                         .test_steps = cfg.data.test_steps,
                                         .seed = cfg.seed});
  const auto dir = out.data_dir();
  io::write_dataset(dir / "train.bin", ds.train);
  io::write_dataset(dir / "test.bin", ds.test);
  if (cfg.data.export_csv) {
    io::write_dataset_csv(dir / "train.csv", ds.train);
    io::write_dataset_csv(dir / "test.csv", ds.test);
  }
  auto j = sidecar(cfg, "generate");
  const Vec clim = metrics::climatological_std(ds.train);
  j["climatological_std"] = std::vector<double>(clim.data(), clim.data() + clim.size());
  j["train"] = {{"steps", ds.train.length()}, {"t0", ds.train.t0}};
  j["test"] = {{"steps", ds.test.length()}, {"t0", ds.test.t0}};
  j["seconds"] = sw.seconds();
  io::write_json(dir / "dataset.json", j);
  return Status::kOk;
}

Status cmd_train(const ExperimentConfig& cfg, const Paths& out) {
  cfg.validate();
  if (cfg.model.kind == "l96") throw InvalidArgument("model.kind = l96 has nothing to train");
  const auto ds = detail::load_dataset(out);
  Stopwatch sw;
  const auto dir = out.model_dir();
  fs::create_directories(dir);
  MacroParams macro = detail::configured_macro(cfg);
  const std::size_t hidden = detail::configured_hidden_dim(cfg);
  auto j = sidecar(cfg, "train");

  if (cfg.model.macro == "optimize") {
    macro::MacroLossSpec spec{.forecasts = cfg.macro.forecasts,
                              .horizon = cfg.macro.horizon,
                              .sync_steps = cfg.macro.sync_steps,
                              .washout = cfg.model.washout,
                              .hidden_dim = cfg.macro.hidden_dim > 0 ? cfg.macro.hidden_dim
                                                                     : (cfg.localized() ? 2000 : hidden),
                              .density = cfg.model.density,
                              .reservoir_seed = cfg.seed,
                              .start_seed = cfg.seed};
    macro::EgoOptions ego{.initial_points = cfg.macro.initial_points,
                          .iterations = cfg.macro.iterations,
                          .batch = cfg.macro.batch,
                          .ei_starts = cfg.macro.ei_starts,
                          .log_values = true,
                          .seed = cfg.seed,
                          .jobs = cfg.jobs,
                          .kriging = {.seed = cfg.seed}};
    const Trajectory& validation = cfg.macro.validation == "test" ? ds.test : ds.train;
    const auto r = cfg.localized()
                       ? macro::optimize_local_macro(loc::build_layout(cfg.system.dim, cfg.model.patch_size, cfg.model.halo),
                                                     ds.train, validation, spec, ego)
                       : macro::optimize_macro(ds.train, validation, spec, ego);
    macro::write_trace_csv(dir / "macro_trace.csv", r.trace, {"sigma_in", "leak", "rho", "log_beta"},
                           provenance(cfg, "train"));
    macro = r.best;
    j["optimization"] = {{"best_loss", r.best_loss}, {"evaluations", r.trace.history.size()},
                         {"search_hidden_dim", spec.hidden_dim}, {"seconds", sw.seconds()}};
  }

  if (cfg.localized()) {
    const auto layout = loc::build_layout(cfg.system.dim, cfg.model.patch_size, cfg.model.halo);
    const loc::LocalizedModel lm(layout, loc::train_local_models(layout, ds.train, macro,
                                                                 {.hidden_dim = hidden,
                                                                  .density = cfg.model.density,
                                                                  .seed = cfg.seed,
                                                                  .washout = cfg.model.washout,
                                                                  .jobs = cfg.jobs}));
    io::write_localized(dir / "local.json", lm);
    j["layout"] = {{"patches", layout.count()}, {"input_dim", layout.input_dim()}};
  } else {
    auto m = ReservoirModel::create({.hidden_dim = hidden,
                                     .input_dim = cfg.system.dim,
                                     .output_dim = cfg.system.dim,
                                     .density = cfg.model.density,
                                     .seed = cfg.seed},
                                    macro);
    fit_readout(m, ds.train, cfg.model.washout);
    io::write_model(dir / "model.rnnda", m);
    j["nnz"] = m.w_res().nnz();
  }
  j["hidden_dim"] = hidden;
  j["macro"] = macro_json(macro);
  j["macro_source"] = cfg.model.macro == "optimize" ? "optimized" : cfg.model.preset;
  j["seconds"] = sw.seconds();
  io::write_json(dir / "model.json", j);
  return Status::kOk;
}

Status cmd_run(const ExperimentConfig& cfg, const Paths& out) {
  cfg.validate();
  const auto ds = detail::load_dataset(out);
  const auto loaded = detail::load_model(cfg, out);
  Stopwatch sw;
  const double dt = cfg.system.dt;
  const std::size_t start = cfg.da.spinup_steps;
  const auto steps = static_cast<std::size_t>(std::llround(cfg.da.duration / dt));
  const Trajectory spin = ds.test.slice(0, start);
  const Trajectory truth = ds.test.slice(start, steps + 1);
  const auto obs = l96::sample_observations(truth, cfg.observed_nodes(), cfg.da.tau_obs, cfg.da.sigma_noise,
                                            cfg.da.sigma_obs, cfg.seed);
  const Vec clim = metrics::climatological_std(ds.train);

  da::CycleConfig cc;
  cc.scheme = da::parse_scheme(cfg.da.scheme);
  cc.ensemble_size = cfg.da.ensemble_size;
  cc.inflation = cfg.da.inflation;
  cc.tau_da = cfg.da.tau_da;
  cc.duration = cfg.da.duration;
  cc.sigma_init = cfg.da.sigma_init;
  cc.spinup_steps = cfg.da.spinup_steps;
  cc.initial_offset = cfg.da.initial_offset;
  cc.initial_offset_steps = cfg.da.initial_offset_steps;
  cc.summary_start = cfg.da.summary_start;
  cc.divergence_nrmse = cfg.da.divergence_nrmse;
  cc.divergence_cycles = cfg.da.divergence_cycles;
  cc.var = {.sigma_b = cfg.da.sigma_b > 0.0 ? cfg.da.sigma_b : cfg.da.sigma_obs,
            .outer_loops = cfg.da.outer_loops,
            .inner_tol = cfg.da.inner_tol,
            .inner_max_iter = cfg.da.inner_max_iter};
  cc.seed = cfg.seed;
  cc.jobs = cfg.jobs;
  const auto res = da::cycle_da(loaded.model(), spin, truth, obs, clim, cc);

  const auto dir = out.run_dir() / da::scheme_name(cc.scheme);
  const auto comments = provenance(cfg, "run");
  da::write_cycle_csv(dir / "cycles.csv", res, comments);
  {
    std::ostringstream header;
    header << "time";
    for (std::size_t i = 0; i < cfg.system.dim; ++i) header << ",truth" << i;
    for (std::size_t i = 0; i < cfg.system.dim; ++i) header << ",analysis" << i;
    std::vector<std::string> rows;
    for (std::size_t c = 0; c < res.records.size(); ++c) {
      std::ostringstream r;
      r << std::setprecision(17) << res.records[c].time;
      const auto step = static_cast<Eigen::Index>(res.records[c].step);
      for (Eigen::Index i = 0; i < truth.states.rows(); ++i) r << ',' << truth.states(i, step);
      for (Eigen::Index i = 0; i < res.analysis.rows(); ++i) r << ',' << res.analysis(i, static_cast<Eigen::Index>(c));
      rows.push_back(r.str());
    }
    detail::write_lines(dir / "states.csv", comments, header.str(), rows);
  }
  auto j = sidecar(cfg, "run");
  j["scheme"] = da::scheme_name(cc.scheme);
  j["model"] = loaded.model().name();
  j["summary"] = {{"start_time", cfg.da.summary_start}, {"cycles", res.summary.cycles},
                  {"nrmse_obs", res.summary.nrmse_obs}, {"nrmse_unobs", res.summary.nrmse_unobs},
                  {"nrmse_all", res.summary.nrmse_all}, {"rmse_all", res.summary.rmse_all}};
  j["diverged"] = res.diverged;
  if (res.diverged) j["divergence"] = {{"cycle", res.diverged_at.value_or(0)}, {"reason", res.divergence_reason}};
  if (cc.scheme == da::Scheme::kFourDVar)
    j["fourdvar"] = {{"max_gradient_ratio", res.max_gradient_ratio}, {"all_inner_converged", res.all_inner_converged}};
  j["seconds"] = sw.seconds();
  io::write_json(dir / "summary.json", j);
  return res.diverged ? Status::kDiverged : Status::kOk;
}

std::vector<std::pair<std::string, std::vector<std::string>>> parse_grid(const std::string& grid) {
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  std::stringstream ss(grid);
  std::string axis;
  while (std::getline(ss, axis, ';')) {
    if (axis.find_first_not_of(" \t") == std::string::npos) continue;
    const auto eq = axis.find('=');
    if (eq == std::string::npos) throw InvalidArgument("sweep.grid axis '" + axis + "' is not KEY=V1,V2,...");
    std::string key = axis.substr(0, eq);
    key.erase(0, key.find_first_not_of(" \t"));
    key.erase(key.find_last_not_of(" \t") + 1);
    (void)ExperimentConfig{}.get(key);  // rejects unknown keys
    std::vector<std::string> values;
    std::stringstream vs(axis.substr(eq + 1));
    std::string v;
    while (std::getline(vs, v, ','))
      if (v.find_first_not_of(" \t") != std::string::npos) values.push_back(v);
    if (values.empty()) throw InvalidArgument("sweep.grid axis '" + key + "' has no values");
    axes.emplace_back(key, values);
  }
  if (axes.empty()) throw InvalidArgument("sweep.grid is empty");
  return axes;
}

Status cmd_sweep(const ExperimentConfig& cfg, const Paths& out) {
  const auto axes = parse_grid(cfg.sweep.grid);
  bool per_point_artifacts = false;
  for (const auto& [key, values] : axes)
    for (const char* sec : {"system.", "data.", "model.", "macro."})
      if (key.rfind(sec, 0) == 0) per_point_artifacts = true;

  std::vector<ExperimentConfig> points{cfg};
  for (const auto& [key, values] : axes) {
    std::vector<ExperimentConfig> next;
    for (const auto& p : points)
      for (const auto& v : values) {
        ExperimentConfig q = p;
        q.set(key, v);
        next.push_back(q);
      }
    points = std::move(next);
  }
  for (const auto& p : points) p.validate();

  const bool needs_model = cfg.model.kind == "rnn";
  if (!per_point_artifacts) {
    if (!fs::exists(out.data_dir() / "train.bin")) cmd_generate(cfg, out);
    if (needs_model && !fs::exists(out.model_dir() / (cfg.localized() ? "local.json" : "model.rnnda")))
      cmd_train(cfg, out);
  }

  const auto dir = out.sweep_dir() / cfg.sweep.name;
  std::vector<Status> status(points.size(), Status::kError);
  std::vector<std::string> errors(points.size());
  const std::size_t outer_jobs = std::max<std::size_t>(1, cfg.jobs);
  parallel_for(points.size(), outer_jobs, [&](std::size_t i) {
    ExperimentConfig p = points[i];
    p.jobs = 1;
    std::ostringstream name;
    name << "point_" << std::setw(3) << std::setfill('0') << i;
    Paths po{dir / name.str(), {}, {}};
    if (!per_point_artifacts) {
      po.data_root = out.data_dir();
      po.model_root = out.model_dir();
    }
    try {
      if (per_point_artifacts) {
        cmd_generate(p, po);
        if (p.model.kind == "rnn") cmd_train(p, po);
      }
      status[i] = cmd_run(p, po);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  std::ostringstream header;
  header << "point";
  for (const auto& [key, values] : axes) header << ',' << key;
  header << ",status,cycles,nrmse_obs,nrmse_unobs,nrmse_all,rmse_all,diverged";
  std::vector<std::string> rows;
  Status overall = Status::kOk;
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::ostringstream r;
    r << std::setprecision(17) << i;
    for (const auto& [key, values] : axes) r << ',' << points[i].get(key);
    std::ostringstream name;
    name << "point_" << std::setw(3) << std::setfill('0') << i;
    const auto summary = dir / name.str() / "run" / da::scheme_name(da::parse_scheme(points[i].da.scheme)) / "summary.json";
    if (status[i] == Status::kError) {
      r << ",error,,,,,,";
      overall = Status::kError;
      std::cerr << "sweep point " << i << " failed: " << errors[i] << '\n';
    } else {
      const auto j = io::read_json(summary);
      const auto& s = j.at("summary");
      r << ',' << (status[i] == Status::kDiverged ? "diverged" : "ok") << ',' << s.at("cycles").get<std::size_t>()
        << ',' << s.at("nrmse_obs").get<double>() << ',' << s.at("nrmse_unobs").get<double>() << ','
        << s.at("nrmse_all").get<double>() << ',' << s.at("rmse_all").get<double>() << ','
        << (j.at("diverged").get<bool>() ? 1 : 0);
      if (status[i] == Status::kDiverged && overall == Status::kOk) overall = Status::kDiverged;
    }
    rows.push_back(r.str());
  }
  detail::write_lines(dir / "sweep.csv", provenance(cfg, "sweep"), header.str(), rows);
  return overall;
}

}  // namespace rnnda::harness
