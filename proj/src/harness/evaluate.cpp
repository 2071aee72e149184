#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "common.hpp"
#include "rnnda/errors.hpp"
#include "rnnda/io.hpp"
#include "rnnda/lyapunov.hpp"
#include "rnnda/metrics.hpp"
#include "rnnda/parallel.hpp"
#include "rnnda/rng.hpp"

namespace rnnda::harness {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

struct VptSamples {
  std::vector<std::size_t> starts;
  std::vector<double> values;
};

// Forecasts from evenly spaced starts of the test trajectory. The model is
// teacher forced through the trajectory once; at each start a copy of the
// synchronized state runs closed loop until the error reaches epsilon.
VptSamples sample_vpt(const da::ForecastModel& model, const Trajectory& test, const Vec& clim,
                      const EvaluateSection& ev, std::size_t jobs) {
  const double dt = test.dt;
  const auto lead = static_cast<std::size_t>(std::llround(ev.max_lead / dt));
  if (test.length() < ev.sync_steps + lead + 2) throw InvalidArgument("evaluate: test trajectory too short for VPT");
  const std::size_t admissible = test.length() - 1 - lead - ev.sync_steps;
  std::size_t count = ev.forecasts;
  if (count > admissible) {
    std::cerr << "evaluate: " << count << " forecasts requested, using the " << admissible
              << " admissible starts\n";
    count = admissible;
  }
  VptSamples out;
  for (std::size_t i = 0; i < count; ++i) out.starts.push_back(ev.sync_steps + i * admissible / count);
  out.values.assign(count, 0.0);

  auto forecast_from = [&](Vec s, std::size_t j) {
    Vec x(static_cast<Eigen::Index>(test.dim()));
    model.step_from(s, test.state(j));
    for (std::size_t k = 1; k <= lead; ++k) {
      if (k > 1) model.step(s);
      model.to_system(s, x);
      const double e = metrics::nrmse(x, test.state(j + k), clim);
      if (!(e < ev.epsilon)) return static_cast<double>(k - 1) * dt;
    }
    return static_cast<double>(lead) * dt;
  };

  constexpr std::size_t kBatch = 256;
  Vec s = model.spin_up(test.states.leftCols(static_cast<Eigen::Index>(ev.sync_steps + 1)));
  std::size_t step = ev.sync_steps;
  std::vector<Vec> batch_states;
  std::vector<std::size_t> batch_index;
  auto flush = [&] {
    parallel_for(batch_states.size(), jobs, [&](std::size_t b) {
      out.values[batch_index[b]] = forecast_from(batch_states[b], out.starts[batch_index[b]]);
    });
    batch_states.clear();
    batch_index.clear();
  };
  for (std::size_t i = 0; i < count; ++i) {
    while (step < out.starts[i]) model.step_from(s, test.state(step++));
    batch_states.push_back(s);
    batch_index.push_back(i);
    if (batch_states.size() == kBatch) flush();
  }
  flush();
  return out;
}

bool has_tangent(const da::ForecastModel& model, const Vec& s) {
  try {
    (void)model.linearize(s);
    return true;
  } catch (const InvalidArgument&) {
    return false;
  }
}

}  // namespace

Status cmd_evaluate(const ExperimentConfig& cfg, const Paths& out) {
  cfg.validate();
  const auto ds = detail::load_dataset(out);
  const auto loaded = detail::load_model(cfg, out);
  const da::ForecastModel& model = loaded.model();
  const da::L96Forecaster nature(cfg.system.dim, cfg.system.dt, cfg.system.forcing);
  const EvaluateSection& ev = cfg.evaluate;
  const Trajectory& test = ds.test;
  const double dt = cfg.system.dt;
  const Vec clim = metrics::climatological_std(ds.train);
  const auto dir = out.evaluate_dir();
  const auto comments = provenance(cfg, "evaluate");
  detail::Stopwatch sw;
  auto j = nlohmann::json{{"verb", "evaluate"}, {"seed", cfg.seed}, {"config", cfg.to_json()}, {"model", model.name()}};

  // Valid prediction time.
  {
    const auto v = sample_vpt(model, test, clim, ev, cfg.jobs);
    std::vector<std::string> rows;
    for (std::size_t i = 0; i < v.values.size(); ++i)
      rows.push_back(std::to_string(v.starts[i]) + "," + fmt(test.time(v.starts[i])) + "," + fmt(v.values[i]));
    detail::write_lines(dir / "vpt.csv", comments, "start_step,start_time,vpt", rows);

    std::vector<std::size_t> counts(ev.bins, 0);
    const double width = ev.max_lead / static_cast<double>(ev.bins);
    for (double x : v.values)
      ++counts[std::min(ev.bins - 1, static_cast<std::size_t>(std::floor(x / width)))];
    rows.clear();
    for (std::size_t b = 0; b < ev.bins; ++b)
      rows.push_back(fmt(b * width) + "," + fmt((b + 1) * width) + "," + std::to_string(counts[b]) + "," +
                     fmt(static_cast<double>(counts[b]) / (static_cast<double>(v.values.size()) * width)));
    detail::write_lines(dir / "vpt_histogram.csv", comments, "lo,hi,count,density", rows);

    std::vector<double> sorted = v.values;
    std::sort(sorted.begin(), sorted.end());
    double mean = 0.0, sq = 0.0;
    for (double x : sorted) mean += x;
    mean /= static_cast<double>(sorted.size());
    for (double x : sorted) sq += (x - mean) * (x - mean);
    j["vpt"] = {{"samples", sorted.size()}, {"epsilon", ev.epsilon}, {"mean", mean},
                {"std", std::sqrt(sq / static_cast<double>(sorted.size()))},
                {"median", sorted[sorted.size() / 2]}, {"min", sorted.front()}, {"max", sorted.back()}};
  }

  // Initial states shared by the tangent and ensemble diagnostics.
  const auto ic_count = std::max(ev.ftle_ics, ev.corr_ics);
  const auto corr_steps = static_cast<std::size_t>(std::llround(ev.corr_lead / dt));
  const auto ftle_steps = static_cast<std::size_t>(std::llround(ev.ftle_horizon / dt));
  const std::size_t tail = std::max(corr_steps, ftle_steps) + 1;
  if (test.length() < ev.sync_steps + tail + ic_count) throw InvalidArgument("evaluate: test trajectory too short");
  const std::size_t span = test.length() - ev.sync_steps - tail;
  std::vector<std::size_t> ic_steps;
  for (std::size_t i = 0; i < ic_count; ++i) ic_steps.push_back(ev.sync_steps + i * span / ic_count);
  std::vector<Vec> model_states(ic_count);
  parallel_for(ic_count, cfg.jobs, [&](std::size_t i) {
    const auto c = static_cast<Eigen::Index>(ic_steps[i]);
    model_states[i] = model.spin_up(test.states.middleCols(c - static_cast<Eigen::Index>(ev.sync_steps),
                                                           static_cast<Eigen::Index>(ev.sync_steps + 1)));
  });

  // Finite-time and asymptotic exponents, where the model has a tangent map.
  if (has_tangent(model, model_states.front())) {
    lyap::FtleOptions fo{.seed = derive_seed(cfg.seed, Stream::kTangent), .initial = std::nullopt, .warmup_steps = ev.ftle_warmup};
    std::vector<Vec> truth_states;
    std::vector<Vec> rnn_states(model_states.begin(), model_states.begin() + static_cast<long>(ev.ftle_ics));
    for (std::size_t i = 0; i < ev.ftle_ics; ++i) truth_states.emplace_back(test.state(ic_steps[i]));
    const auto f_model = lyap::ftle_average(model, rnn_states, ftle_steps, dt, fo, cfg.jobs);
    const auto f_true = lyap::ftle_average(nature, truth_states, ftle_steps, dt, fo, cfg.jobs);
    std::vector<std::string> rows;
    for (std::size_t h = 0; h < ftle_steps; ++h)
      rows.push_back(fmt((h + 1) * dt) + "," + fmt(f_model.mean[h]) + "," + fmt(f_model.std[h]) + "," +
                     fmt(f_true.mean[h]) + "," + fmt(f_true.std[h]));
    detail::write_lines(dir / "ftle.csv", comments, "horizon,model_mean,model_std,l96_mean,l96_std", rows);

    const std::size_t n_exp = cfg.system.dim;
    lyap::ModelStream ms(model, model_states.front());
    lyap::ModelStream ns(nature, test.state(ic_steps.front()));
    const auto lm = lyap::lyapunov_spectrum(ms, n_exp, ev.lyapunov_steps, dt, derive_seed(cfg.seed, Stream::kTangent, 1));
    const auto ln = lyap::lyapunov_spectrum(ns, n_exp, ev.lyapunov_steps, dt, derive_seed(cfg.seed, Stream::kTangent, 1));
    rows.clear();
    for (std::size_t k = 0; k < n_exp; ++k) rows.push_back(std::to_string(k) + "," + fmt(lm.exponents[k]) + "," + fmt(ln.exponents[k]));
    detail::write_lines(dir / "lyapunov.csv", comments, "index,model,l96", rows);
    j["ftle"] = {{"horizon", ev.ftle_horizon}, {"model_final", f_model.mean.back()}, {"l96_final", f_true.mean.back()}};
    j["lyapunov"] = {{"model", lm.exponents}, {"l96", ln.exponents}};
  } else {
    std::cerr << "evaluate: " << model.name() << " has no tangent map; skipping FTLE and Lyapunov output\n";
  }

  // Forecast error correlations: model ensemble and climatology, each
  // against an ensemble of the numerical model from the same perturbations.
  {
    const auto d = static_cast<Eigen::Index>(cfg.system.dim);
    const auto k = static_cast<Eigen::Index>(ev.corr_members);
    const Mat clim_corr = metrics::correlation_matrix(ds.train.states);
    std::vector<std::vector<double>> rnn_rmse(ev.corr_ics), clim_rmse(ev.corr_ics);
    std::vector<std::vector<Mat>> snap_model(ev.corr_ics), snap_true(ev.corr_ics);
    parallel_for(ev.corr_ics, cfg.jobs, [&](std::size_t i) {
      Rng rng(cfg.seed, Stream::kEvaluation, i);
      const Vec x0 = test.state(ic_steps[i]);
      std::vector<Mat> ens_model(corr_steps + 1, Mat(d, k)), ens_true(corr_steps + 1, Mat(d, k));
      Vec x(d);
      for (Eigen::Index m = 0; m < k; ++m) {
        Vec p = x0;
        for (Eigen::Index r = 0; r < d; ++r) p(r) += rng.normal(0.0, ev.corr_sigma);
        ens_model[0].col(m) = p;
        ens_true[0].col(m) = p;
        Vec s = model_states[i];
        Vec t = p;
        model.step_from(s, p);
        for (std::size_t h = 1; h <= corr_steps; ++h) {
          if (h > 1) model.step(s);
          model.to_system(s, x);
          ens_model[h].col(m) = x;
          nature.step(t);
          ens_true[h].col(m) = t;
        }
      }
      rnn_rmse[i] = metrics::error_correlation_rmse(ens_model, ens_true);
      clim_rmse[i] = metrics::error_correlation_rmse(ens_true, clim_corr);
      if (i == 0) {
        const std::size_t stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.2 / dt)));
        for (std::size_t h = 0; h <= corr_steps; h += stride) {
          snap_model[0].push_back(metrics::correlation_matrix(ens_model[h]));
          snap_true[0].push_back(metrics::correlation_matrix(ens_true[h]));
        }
      }
    });
    std::vector<std::string> rows;
    double final_rnn = 0.0, final_clim = 0.0;
    for (std::size_t h = 0; h <= corr_steps; ++h) {
      double a = 0.0, b = 0.0;
      for (std::size_t i = 0; i < ev.corr_ics; ++i) {
        a += rnn_rmse[i][h];
        b += clim_rmse[i][h];
      }
      a /= static_cast<double>(ev.corr_ics);
      b /= static_cast<double>(ev.corr_ics);
      rows.push_back(fmt(h * dt) + "," + fmt(a) + "," + fmt(b));
      final_rnn = a;
      final_clim = b;
    }
    detail::write_lines(dir / "correlation.csv", comments, "lead,model_rmse,climatology_rmse", rows);
    rows.clear();
    const std::size_t stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.2 / dt)));
    for (std::size_t n = 0; n < snap_model[0].size(); ++n)
      for (const auto* src : {&snap_true[0], &snap_model[0]})
        for (Eigen::Index r = 0; r < d; ++r)
          for (Eigen::Index c = 0; c < d; ++c)
            rows.push_back(fmt(n * stride * dt) + "," + (src == &snap_true[0] ? "l96" : "model") + "," +
                           std::to_string(r) + "," + std::to_string(c) + "," + fmt((*src)[n](r, c)));
    detail::write_lines(dir / "correlation_matrices.csv", comments, "lead,source,row,col,value", rows);
    j["correlation"] = {{"ics", ev.corr_ics}, {"members", ev.corr_members}, {"lead", ev.corr_lead},
                        {"model_rmse_final", final_rnn}, {"climatology_rmse_final", final_clim}};
  }
  j["seconds"] = sw.seconds();
  io::write_json(dir / "evaluate.json", j);
  return Status::kOk;
}

}  // namespace rnnda::harness
