#include <filesystem>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>

#include "rnnda/assimilation.hpp"
#include "rnnda/errors.hpp"
#include "rnnda/metrics.hpp"
#include "rnnda/parallel.hpp"
#include "rnnda/rng.hpp"

namespace rnnda::da {

Scheme parse_scheme(const std::string& name) {
  if (name == "free" || name == "none") return Scheme::kFree;
  if (name == "di" || name == "direct_insertion") return Scheme::kDirectInsertion;
  if (name == "etkf" || name == "letkf") return Scheme::kEtkf;
  if (name == "4dvar" || name == "fourdvar") return Scheme::kFourDVar;
  throw InvalidArgument("unknown DA scheme '" + name + "'");
}

std::string scheme_name(Scheme s) {
  switch (s) {
    case Scheme::kFree: return "free";
    case Scheme::kDirectInsertion: return "direct_insertion";
    case Scheme::kEtkf: return "etkf";
    case Scheme::kFourDVar: return "4dvar";
  }
  return "?";
}

namespace {

std::size_t steps_of(double tau, double dt, const char* what) {
  const double ratio = tau / dt;
  const double r = std::round(ratio);
  if (r < 1.0 || std::abs(ratio - r) > 1e-9 * std::max(1.0, r))
    throw AlignmentError(std::string(what) + " is not a positive multiple of the model step");
  return static_cast<std::size_t>(r);
}

Mat system_members(const ForecastModel& model, const Mat& members) {
  Mat xs(static_cast<Eigen::Index>(model.system_dim()), members.cols());
  Vec x;
  for (Eigen::Index m = 0; m < members.cols(); ++m) {
    model.to_system(members.col(m), x);
    xs.col(m) = x;
  }
  return xs;
}

double mean_spread(const Mat& xs) {
  if (xs.cols() < 2) return 0.0;
  const Mat pert = xs.colwise() - xs.rowwise().mean();
  const Vec var = pert.rowwise().squaredNorm() / static_cast<double>(xs.cols() - 1);
  return var.cwiseSqrt().mean();
}

// Rows of the observation vector that a domain may use.
std::vector<Eigen::Index> local_rows(const AnalysisDomain& dom, const std::vector<std::size_t>& obs_idx) {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < obs_idx.size(); ++i) {
    if (dom.visible_nodes.empty() ||
        std::binary_search(dom.visible_nodes.begin(), dom.visible_nodes.end(), obs_idx[i]))
      rows.push_back(static_cast<Eigen::Index>(i));
  }
  return rows;
}

// Local ETKF analyses. Each domain reads only the background, so the result
// does not depend on processing order.
Mat etkf_analysis(const ForecastModel& model, const Mat& members, const Mat& predicted, const Vec& y,
                  const Vec& r_diag, const std::vector<std::size_t>& obs_idx, const CycleConfig& cfg) {
  const auto domains = model.analysis_domains();
  std::vector<std::size_t> order(domains.size());
  std::iota(order.begin(), order.end(), 0);
  if (!cfg.domain_order.empty()) {
    if (cfg.domain_order.size() != domains.size()) throw InvalidArgument("domain_order has the wrong length");
    order = cfg.domain_order;
  }
  Mat analysis = members;
  for (std::size_t d : order) {
    const AnalysisDomain& dom = domains.at(d);
    const auto rows = local_rows(dom, obs_idx);
    Mat yl(static_cast<Eigen::Index>(rows.size()), predicted.cols());
    Vec ol(static_cast<Eigen::Index>(rows.size())), rl(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      yl.row(ii) = predicted.row(rows[i]);
      ol[ii] = y[rows[i]];
      rl[ii] = r_diag[rows[i]];
    }
    const EtkfTransform t = etkf_transform(yl, ol, rl, cfg.inflation);
    analysis.middleRows(dom.offset, dom.size) = apply_transform(members.middleRows(dom.offset, dom.size), t);
  }
  return analysis;
}

}  // namespace

CycleSummary summarize(const std::vector<CycleRecord>& records, double start_time) {
  CycleSummary s;
  for (const auto& r : records) {
    if (r.time + 1e-12 < start_time) continue;
    s.nrmse_obs += r.nrmse_obs;
    s.nrmse_unobs += r.nrmse_unobs;
    s.nrmse_all += r.nrmse_all;
    s.rmse_all += r.rmse_all;
    ++s.cycles;
  }
  if (s.cycles > 0) {
    const double n = static_cast<double>(s.cycles);
    s.nrmse_obs /= n;
    s.nrmse_unobs /= n;
    s.nrmse_all /= n;
    s.rmse_all /= n;
  }
  return s;
}

CycleResult cycle_da(const ForecastModel& model, const Trajectory& spinup_truth, const Trajectory& truth,
                     const ObservationSequence& obs, const Vec& clim_std, const CycleConfig& cfg) {
  const std::size_t dim = model.system_dim();
  truth.validate();
  if (truth.dim() != dim) throw InvalidDimension("cycle_da: truth and model dimensions differ");
  if (static_cast<std::size_t>(clim_std.size()) != dim) throw InvalidDimension("cycle_da: climatology size");
  obs.validate(dim);
  const double dt = truth.dt;
  const std::size_t n_da = steps_of(cfg.tau_da, dt, "tau_da");
  const std::size_t total = static_cast<std::size_t>(std::llround(cfg.duration / dt));
  if (truth.length() < total) throw InvalidArgument("cycle_da: truth shorter than the experiment");
  const std::size_t n_cycles = total / n_da;
  if (n_cycles == 0) throw InvalidArgument("cycle_da: experiment shorter than one cycle");

  const bool ensemble = cfg.scheme == Scheme::kEtkf;
  const std::size_t k = ensemble ? cfg.ensemble_size : 1;
  if (ensemble && k < 2) throw InvalidArgument("ETKF needs at least two members");
  if (spinup_truth.length() < cfg.spinup_steps) throw InvalidArgument("cycle_da: spinup truth too short");

  std::map<std::size_t, Eigen::Index> obs_at;
  for (std::size_t i = 0; i < obs.count(); ++i) obs_at[obs.steps[i]] = static_cast<Eigen::Index>(i);
  const Vec r_diag = obs.r_diag();
  std::vector<std::size_t> unobserved;
  for (std::size_t i = 0; i < dim; ++i)
    if (std::find(obs.obs_indices.begin(), obs.obs_indices.end(), i) == obs.obs_indices.end())
      unobserved.push_back(i);

  // Each member synchronizes on its own noisy copy of the spinup window,
  // whose last column is the first analysis time.
  const auto sdim = static_cast<Eigen::Index>(model.state_dim());
  Mat members(sdim, static_cast<Eigen::Index>(k));
  {
    Mat history(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(cfg.spinup_steps + 1));
    history.leftCols(static_cast<Eigen::Index>(cfg.spinup_steps)) =
        spinup_truth.states.rightCols(static_cast<Eigen::Index>(cfg.spinup_steps));
    history.rightCols(1) = truth.state(0);
    if (cfg.initial_offset > 0.0) {
      // One displacement shared by all members, so the initial background
      // mean starts away from the truth.
      Rng rng(cfg.seed, Stream::kEnsembleInit, 1ULL << 32);
      Vec delta(static_cast<Eigen::Index>(dim));
      for (Eigen::Index i = 0; i < delta.size(); ++i) delta[i] = cfg.initial_offset * clim_std[i] * rng.normal();
      const auto n = std::min<Eigen::Index>(static_cast<Eigen::Index>(cfg.initial_offset_steps) + 1, history.cols());
      history.rightCols(n).colwise() += delta;
    }
    std::vector<Vec> init(k);
    parallel_for(k, cfg.jobs, [&](std::size_t m) {
      Rng rng(cfg.seed, Stream::kEnsembleInit, m);
      Mat noisy = history;
      for (Eigen::Index j = 0; j < noisy.cols(); ++j)
        for (Eigen::Index i = 0; i < noisy.rows(); ++i) noisy(i, j) += cfg.sigma_init * rng.normal();
      init[m] = model.spin_up(noisy);
    });
    for (std::size_t m = 0; m < k; ++m) members.col(static_cast<Eigen::Index>(m)) = init[m];
  }

  CycleResult out;
  out.analysis.resize(static_cast<Eigen::Index>(dim), 0);
  std::vector<Vec> analyses;
  std::size_t bad_streak = 0;

  try {
    for (std::size_t c = 0; c < n_cycles; ++c) {
      const std::size_t step = c * n_da;
      CycleRecord rec;
      rec.step = step;
      rec.time = static_cast<double>(step) * dt;
      const Vec x_true = truth.state(step);

      const Mat xs_b = system_members(model, members);
      const Vec xb = xs_b.rowwise().mean();
      const auto it = obs_at.find(step);
      Vec x_a = xb;
      Mat members_a = members;
      Vec di_input;

      if (it != obs_at.end()) {
        const Vec y = obs.values.col(it->second);
        Vec hx(y.size());
        for (std::size_t i = 0; i < obs.obs_indices.size(); ++i)
          hx[static_cast<Eigen::Index>(i)] = xb[static_cast<Eigen::Index>(obs.obs_indices[i])];
        const Vec d = y - hx;
        rec.n_obs = static_cast<std::size_t>(y.size());
        if (y.size() > 0) {
          rec.innovation_mean = d.mean();
          rec.innovation_var = (d.array() - d.mean()).square().mean();
        }
        if (cfg.scheme == Scheme::kDirectInsertion) {
          di_input = direct_insertion(xb, y, obs.obs_indices);
          x_a = di_input;
        } else if (cfg.scheme == Scheme::kEtkf) {
          Mat predicted(y.size(), members.cols());
          for (std::size_t i = 0; i < obs.obs_indices.size(); ++i)
            predicted.row(static_cast<Eigen::Index>(i)) = xs_b.row(static_cast<Eigen::Index>(obs.obs_indices[i]));
          members_a = etkf_analysis(model, members, predicted, y, r_diag, obs.obs_indices, cfg);
        }
      }
      if (cfg.scheme == Scheme::kFourDVar) {
        ObsWindow w;
        w.obs_indices = obs.obs_indices;
        w.r_diag = r_diag;
        for (auto o = obs_at.lower_bound(step); o != obs_at.end() && o->first < step + n_da; ++o) {
          w.steps.push_back(o->first - step);
          w.values.push_back(obs.values.col(o->second));
        }
        const Vec s_b = members.col(0);
        const VarResult var = fourdvar_analysis(model, s_b, s_b, w, cfg.var);
        members_a.col(0) = var.s_a0;
        for (const auto& lp : var.loops) rec.gradient_ratio = std::max(rec.gradient_ratio, lp.gradient_ratio);
        rec.inner_converged = var.converged;
        out.max_gradient_ratio = std::max(out.max_gradient_ratio, rec.gradient_ratio);
        out.all_inner_converged = out.all_inner_converged && var.converged;
      }
      if (cfg.scheme == Scheme::kEtkf || cfg.scheme == Scheme::kFourDVar || cfg.scheme == Scheme::kFree) {
        const Mat xs_a = system_members(model, members_a);
        x_a = xs_a.rowwise().mean();
        rec.spread = mean_spread(xs_a);
      }
      if (!x_a.allFinite()) throw DivergenceError("non-finite analysis", step);

      rec.nrmse_all = metrics::nrmse(x_a, x_true, clim_std);
      rec.nrmse_obs = obs.obs_indices.empty() ? 0.0 : metrics::nrmse(x_a, x_true, clim_std, obs.obs_indices);
      rec.nrmse_unobs = unobserved.empty() ? 0.0 : metrics::nrmse(x_a, x_true, clim_std, unobserved);
      rec.bg_nrmse_all = metrics::nrmse(xb, x_true, clim_std);
      rec.bg_nrmse_obs = obs.obs_indices.empty() ? 0.0 : metrics::nrmse(xb, x_true, clim_std, obs.obs_indices);
      rec.bg_nrmse_unobs = unobserved.empty() ? 0.0 : metrics::nrmse(xb, x_true, clim_std, unobserved);
      rec.rmse_all = std::sqrt((x_a - x_true).squaredNorm() / static_cast<double>(dim));
      out.records.push_back(rec);
      analyses.push_back(x_a);

      bad_streak = rec.nrmse_all > cfg.divergence_nrmse ? bad_streak + 1 : 0;
      if (bad_streak >= cfg.divergence_cycles) {
        out.diverged = true;
        out.diverged_at = step;
        out.divergence_reason = "analysis NRMSE above threshold for consecutive cycles";
        break;
      }

      // Forecast to the next analysis time. Direct insertion drives every
      // step that has an observation with the inserted state.
      members = members_a;
      parallel_for(k, cfg.jobs, [&](std::size_t m) {
        Vec s = members.col(static_cast<Eigen::Index>(m));
        for (std::size_t j = 0; j < n_da; ++j) {
          const std::size_t t = step + j;
          if (cfg.scheme == Scheme::kDirectInsertion && obs_at.count(t)) {
            const Vec xin = j == 0 ? di_input
                                   : direct_insertion(model.system(s), obs.values.col(obs_at.at(t)),
                                                      obs.obs_indices);
            model.step_from(s, xin);
          } else {
            model.step(s);
          }
          if (!s.allFinite()) throw DivergenceError("non-finite forecast", t + 1);
        }
        members.col(static_cast<Eigen::Index>(m)) = s;
      });
    }
  } catch (const DivergenceError& e) {
    out.diverged = true;
    out.diverged_at = e.step();
    out.divergence_reason = e.what();
  } catch (const NumericalError& e) {
    out.diverged = true;
    out.diverged_at = out.records.empty() ? 0 : out.records.back().step;
    out.divergence_reason = e.what();
  }

  out.analysis.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(analyses.size()));
  for (std::size_t i = 0; i < analyses.size(); ++i) out.analysis.col(static_cast<Eigen::Index>(i)) = analyses[i];
  out.summary = summarize(out.records, cfg.summary_start);
  return out;
}

void write_cycle_csv(const std::string& path, const CycleResult& result,
                     const std::vector<std::string>& comments) {
  if (const auto parent = std::filesystem::path(path).parent_path(); !parent.empty())
    std::filesystem::create_directories(parent);
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  for (const auto& c : comments) f << "# " << c << '\n';
  f << "time,step,nrmse_obs,nrmse_unobs,nrmse_all,bg_nrmse_obs,bg_nrmse_unobs,bg_nrmse_all,rmse_all,"
       "spread,innovation_mean,innovation_var,n_obs,gradient_ratio,inner_converged\n";
  f << std::setprecision(17);
  for (const auto& r : result.records) {
    f << r.time << ',' << r.step << ',' << r.nrmse_obs << ',' << r.nrmse_unobs << ',' << r.nrmse_all << ','
      << r.bg_nrmse_obs << ',' << r.bg_nrmse_unobs << ',' << r.bg_nrmse_all << ',' << r.rmse_all << ','
      << r.spread << ',' << r.innovation_mean << ',' << r.innovation_var << ',' << r.n_obs << ','
      << r.gradient_ratio << ',' << (r.inner_converged ? 1 : 0) << '\n';
  }
}

}  // namespace rnnda::da
