#include <cmath>

#include "rnnda/assimilation.hpp"
#include "rnnda/errors.hpp"

namespace rnnda::da {

namespace {

void check_window(const ObsWindow& w, std::size_t system_dim) {
  const std::size_t p = w.obs_indices.size();
  if (w.values.size() != w.steps.size()) throw InvalidDimension("4D-Var: one value vector per obs time");
  if (static_cast<std::size_t>(w.r_diag.size()) != p) throw InvalidDimension("4D-Var: R size");
  for (std::size_t i = 0; i < w.steps.size(); ++i) {
    if (static_cast<std::size_t>(w.values[i].size()) != p) throw InvalidDimension("4D-Var: obs vector size");
    if (i > 0 && w.steps[i] <= w.steps[i - 1]) throw InvalidArgument("4D-Var: obs steps must increase");
  }
  for (auto idx : w.obs_indices)
    if (idx >= system_dim) throw InvalidDimension("4D-Var: obs index out of range");
  if (p > 0 && !(w.r_diag.minCoeff() > 0.0)) throw InvalidArgument("4D-Var: R must be positive definite");
}

std::size_t window_length(const ObsWindow& w) { return w.steps.empty() ? 0 : w.steps.back(); }

Vec observe(const ForecastModel& model, const Vec& s, const std::vector<std::size_t>& idx) {
  const Vec x = model.system(s);
  Vec y(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) y[static_cast<Eigen::Index>(i)] = x[static_cast<Eigen::Index>(idx[i])];
  return y;
}

// G^T H^T w for point observations.
Vec observe_transpose(const ForecastModel& model, const Vec& w, const std::vector<std::size_t>& idx) {
  Vec x = Vec::Zero(static_cast<Eigen::Index>(model.system_dim()));
  for (std::size_t i = 0; i < idx.size(); ++i) x[static_cast<Eigen::Index>(idx[i])] += w[static_cast<Eigen::Index>(i)];
  Vec s;
  model.to_system_transpose(x, s);
  return s;
}

// sum_t M_t^T q_t where q_t is supplied at every obs time by `at_obs(i)`.
template <class F>
Vec adjoint_sum(const TangentChain& chain, const ObsWindow& w, F&& at_obs) {
  const Eigen::Index n = chain.state(0).size();
  Vec lambda = Vec::Zero(n), tmp(n);
  std::size_t k = w.steps.size();
  for (std::size_t t = window_length(w) + 1; t-- > 0;) {
    if (k > 0 && w.steps[k - 1] == t) {
      lambda += at_obs(k - 1);
      --k;
    }
    if (t > 0) {
      chain.step_map(t - 1).apply_transpose(lambda, tmp);
      lambda.swap(tmp);
    }
  }
  return lambda;
}

}  // namespace

std::pair<double, double> fourdvar_cost(const ForecastModel& model, const Vec& s0, const Vec& s_b0,
                                        const ObsWindow& window, double sigma_b) {
  check_window(window, model.system_dim());
  const double jb = 0.5 * (s0 - s_b0).squaredNorm() / (sigma_b * sigma_b);
  double jo = 0.0;
  Vec s = s0;
  std::size_t t = 0;
  for (std::size_t i = 0; i < window.steps.size(); ++i) {
    model.advance(s, window.steps[i] - t);
    t = window.steps[i];
    const Vec d = window.values[i] - observe(model, s, window.obs_indices);
    jo += 0.5 * d.cwiseAbs2().cwiseQuotient(window.r_diag).sum();
  }
  return {jb, jo};
}

VarResult fourdvar_analysis(const ForecastModel& model, const Vec& s_f0, const Vec& s_b0,
                            const ObsWindow& window, const VarConfig& cfg) {
  check_window(window, model.system_dim());
  if (!(cfg.sigma_b > 0.0)) throw InvalidArgument("4D-Var: sigma_b must be positive");
  if (cfg.outer_loops < 1) throw InvalidArgument("4D-Var: at least one outer loop");
  const double b_var = cfg.sigma_b * cfg.sigma_b;
  const Vec r_inv = window.r_diag.cwiseInverse();

  VarResult out;
  out.s_a0 = s_f0;
  for (std::size_t outer = 0; outer < cfg.outer_loops; ++outer) {
    OuterLoopStats stats;
    const TangentChain chain(model, out.s_a0, window_length(window));
    std::vector<Vec> innov(window.steps.size());
    stats.cost_b = 0.5 * (out.s_a0 - s_b0).squaredNorm() / b_var;
    for (std::size_t i = 0; i < window.steps.size(); ++i) {
      innov[i] = window.values[i] - observe(model, chain.state(window.steps[i]), window.obs_indices);
      stats.cost_o += 0.5 * innov[i].cwiseAbs2().dot(r_inv);
    }
    stats.cost_before = stats.cost_b + stats.cost_o;

    Vec rhs = s_b0 - out.s_a0;
    if (!window.steps.empty()) {
      rhs += b_var * adjoint_sum(chain, window, [&](std::size_t i) {
        return observe_transpose(model, r_inv.cwiseProduct(innov[i]), window.obs_indices);
      });
    }

    auto apply_a = [&](const Vec& v, Vec& av) {
      av = v;
      if (window.steps.empty()) return;
      std::vector<Vec> q(window.steps.size());
      Vec u = v, tmp(v.size());
      std::size_t k = 0;
      for (std::size_t t = 0; k < window.steps.size(); ++t) {
        if (window.steps[k] == t) {
          q[k] = observe_transpose(model, r_inv.cwiseProduct(observe(model, u, window.obs_indices)),
                                   window.obs_indices);
          ++k;
          if (k == window.steps.size()) break;
        }
        chain.step_map(t).apply(u, tmp);
        u.swap(tmp);
      }
      av += b_var * adjoint_sum(chain, window, [&](std::size_t i) -> const Vec& { return q[i]; });
    };

    const SolveResult sol = bicgstab(apply_a, rhs, cfg.inner_tol, cfg.inner_max_iter, outer);
    stats.inner_iterations = sol.iterations;
    stats.inner_converged = sol.converged;
    stats.gradient_ratio = rhs.norm() > 0.0 ? sol.residual_norm / rhs.norm() : 0.0;
    out.converged = out.converged && sol.converged;
    out.s_a0 += sol.x;
    if (!out.s_a0.allFinite()) throw NumericalError("4D-Var: non-finite analysis");
    out.loops.push_back(stats);
  }
  const auto [jb, jo] = fourdvar_cost(model, out.s_a0, s_b0, window, cfg.sigma_b);
  out.final_cost = jb + jo;
  return out;
}

}  // namespace rnnda::da
