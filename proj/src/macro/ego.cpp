#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>

#include "rnnda/errors.hpp"
#include "rnnda/macro_training.hpp"
#include "rnnda/parallel.hpp"
#include "rnnda/rng.hpp"

namespace rnnda::macro {

namespace {

using Objective = std::function<double(const Vec&)>;

struct MinResult {
  Vec x;
  double f;
};

double gsl_trampoline(const gsl_vector* v, void* params) {
  const auto& f = *static_cast<const Objective*>(params);
  Vec x(static_cast<Eigen::Index>(v->size));
  for (std::size_t i = 0; i < v->size; ++i) x[static_cast<Eigen::Index>(i)] = gsl_vector_get(v, i);
  const double y = f(x);
  return std::isfinite(y) ? y : std::numeric_limits<double>::max();
}

// GSL simplex (nmsimplex2) minimization.
MinResult nelder_mead(const Objective& f, const Vec& x0, double step, std::size_t max_iter, double size_tol) {
  const auto n = static_cast<std::size_t>(x0.size());
  gsl_vector* x = gsl_vector_alloc(n);
  gsl_vector* ss = gsl_vector_alloc(n);
  for (std::size_t i = 0; i < n; ++i) gsl_vector_set(x, i, x0[static_cast<Eigen::Index>(i)]);
  gsl_vector_set_all(ss, step);
  gsl_multimin_function fn{&gsl_trampoline, n, const_cast<Objective*>(&f)};
  gsl_multimin_fminimizer* m = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
  gsl_multimin_fminimizer_set(m, &fn, x, ss);
  for (std::size_t it = 0; it < max_iter; ++it) {
    if (gsl_multimin_fminimizer_iterate(m) != GSL_SUCCESS) break;
    if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(m), size_tol) == GSL_SUCCESS) break;
  }
  MinResult r{Vec(static_cast<Eigen::Index>(n)), m->fval};
  for (std::size_t i = 0; i < n; ++i) r.x[static_cast<Eigen::Index>(i)] = gsl_vector_get(m->x, i);
  gsl_multimin_fminimizer_free(m);
  gsl_vector_free(ss);
  gsl_vector_free(x);
  return r;
}

struct GslHandlerOff {
  GslHandlerOff() { gsl_set_error_handler_off(); }
};
const GslHandlerOff gsl_handler_off;

Vec clamp_box(const Vec& x, double lo, double hi) { return x.cwiseMax(lo).cwiseMin(hi); }

double correlation(const Vec& a, const Vec& b, const Vec& theta) {
  return std::exp(-(theta.array() * (a - b).array().square()).sum());
}

Vec random_unit(Rng& rng, std::size_t d) {
  Vec u(static_cast<Eigen::Index>(d));
  for (auto& v : u) v = rng.uniform(0.0, 1.0);
  return u;
}

}  // namespace

// ---------------------------------------------------------------------------
// Kriging

Surrogate Surrogate::assemble(std::vector<Vec> points, Vec values, Vec theta) {
  const auto n = static_cast<Eigen::Index>(points.size());
  Mat r(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    r(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) r(i, j) = r(j, i) = correlation(points[i], points[j], theta);
  }
  Surrogate s;
  for (double jitter : {1e-10, 1e-8, 1e-6}) {
    Eigen::LLT<Mat> llt(r + jitter * Mat::Identity(n, n));
    if (llt.info() != Eigen::Success) continue;
    s.chol_ = llt.matrixL();
    s.jitter_ = jitter;
    break;
  }
  if (s.jitter_ == 0.0) throw NumericalError("Kriging correlation matrix is singular at the largest jitter");

  auto solve = [&](const Vec& b) {
    Vec y = s.chol_.triangularView<Eigen::Lower>().solve(b);
    return Vec(s.chol_.transpose().triangularView<Eigen::Upper>().solve(y));
  };
  s.r_inv_one_ = solve(Vec::Ones(n));
  s.one_r_one_ = s.r_inv_one_.sum();
  s.mu_ = s.r_inv_one_.dot(values) / s.one_r_one_;
  s.alpha_ = solve((values.array() - s.mu_).matrix());
  const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
  s.sigma2_ = std::max((values.array() - s.mu_).matrix().dot(s.alpha_) / static_cast<double>(n), 1e-24 * scale * scale);
  const double log_det = 2.0 * s.chol_.diagonal().array().log().sum();
  s.nll_ = static_cast<double>(n) * std::log(s.sigma2_) + log_det;
  s.points_ = std::move(points);
  s.values_ = std::move(values);
  s.theta_ = std::move(theta);
  return s;
}

Prediction Surrogate::predict(const Vec& x) const {
  const auto n = static_cast<Eigen::Index>(points_.size());
  Vec k(n);
  for (Eigen::Index i = 0; i < n; ++i) k[i] = correlation(x, points_[i], theta_);
  const Vec v = chol_.triangularView<Eigen::Lower>().solve(k);
  const double u = 1.0 - r_inv_one_.dot(k);
  const double var = sigma2_ * (1.0 - v.squaredNorm() + u * u / one_r_one_);
  return {mu_ + k.dot(alpha_), std::max(var, 0.0)};
}

Surrogate Surrogate::with_point(const Vec& x, double value) const {
  auto pts = points_;
  pts.push_back(x);
  Vec vals(values_.size() + 1);
  vals << values_, value;
  return assemble(std::move(pts), std::move(vals), theta_);
}

Surrogate fit_surrogate(const std::vector<Vec>& points, const Vec& values, const KrigingOptions& opts) {
  if (points.size() != static_cast<std::size_t>(values.size())) throw InvalidDimension("points and values differ in count");
  if (points.size() < 2) throw InvalidArgument("Kriging needs at least two points");
  const auto d = static_cast<std::size_t>(points[0].size());
  for (const auto& p : points)
    if (static_cast<std::size_t>(p.size()) != d) throw InvalidDimension("points differ in dimension");
  bool distinct = false;
  for (std::size_t i = 1; i < points.size() && !distinct; ++i) distinct = points[i] != points[0];
  if (!distinct) throw InvalidArgument("Kriging needs at least two distinct points");
  if (!values.allFinite()) throw InvalidArgument("Kriging values must be finite");

  const double lo = opts.log10_theta_lo, hi = opts.log10_theta_hi;
  const Objective nll = [&](const Vec& log_theta) {
    const Vec theta = clamp_box(log_theta, lo, hi).unaryExpr([](double t) { return std::pow(10.0, t); });
    try {
      return Surrogate::assemble(points, values, theta).neg_log_likelihood();
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::max();
    }
  };
  Rng rng(opts.seed, Stream::kOptimizer, 0x4b52);
  MinResult best{Vec::Zero(static_cast<Eigen::Index>(d)), nll(Vec::Zero(static_cast<Eigen::Index>(d)))};
  for (std::size_t r = 0; r <= opts.restarts; ++r) {
    Vec x0 = r == 0 ? Vec::Zero(static_cast<Eigen::Index>(d))
                    : Vec((lo + (hi - lo) * random_unit(rng, d).array()).matrix());
    auto res = nelder_mead(nll, x0, 0.5, 300, 1e-4);
    res.x = clamp_box(res.x, lo, hi);
    res.f = nll(res.x);
    if (res.f < best.f) best = res;
  }
  const Vec theta = best.x.unaryExpr([](double t) { return std::pow(10.0, t); });
  return Surrogate::assemble(points, values, theta);
}

double expected_improvement(double mean, double stddev, double best) {
  if (!(stddev > 0.0)) return 0.0;
  const double z = (best - mean) / stddev;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return std::max((best - mean) * cdf + stddev * pdf, 0.0);
}

double expected_improvement(const Surrogate& s, const Vec& x, double best) {
  const auto p = s.predict(x);
  // Relative floor: at sampled points the variance is jitter-level noise.
  const double floor = 1e-9 * s.process_variance();
  return expected_improvement(p.mean, p.variance > floor ? std::sqrt(p.variance) : 0.0, best);
}

// ---------------------------------------------------------------------------
// EGO

std::vector<Vec> latin_hypercube(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed, Stream::kOptimizer, 0x4c48);
  std::vector<Vec> pts(n, Vec(static_cast<Eigen::Index>(d)));
  std::vector<std::size_t> perm(n);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    for (std::size_t i = 0; i < n; ++i)
      pts[i][static_cast<Eigen::Index>(j)] = (static_cast<double>(perm[i]) + rng.uniform(0.0, 1.0)) / static_cast<double>(n);
  }
  return pts;
}

namespace {

struct Proposal {
  Vec u;
  double ei;
};

// Multistart EI maximization in the unit box. Falls back to the start with
// the largest predictive variance when EI vanishes everywhere.
Proposal maximize_ei(const Surrogate& sur, double best, const EgoOptions& opts, Rng& rng) {
  const auto d = sur.dim();
  const Objective neg_ei = [&](const Vec& u) { return -expected_improvement(sur, clamp_box(u, 0.0, 1.0), best); };
  Proposal out{Vec(), 0.0};
  Vec widest;
  double widest_var = -1.0;
  for (std::size_t k = 0; k < opts.ei_starts; ++k) {
    const Vec u0 = random_unit(rng, d);
    const double var0 = sur.predict(u0).variance;
    if (var0 > widest_var) {
      widest_var = var0;
      widest = u0;
    }
    auto r = nelder_mead(neg_ei, u0, 0.05, opts.ei_max_iter, 1e-6);
    const Vec u = clamp_box(r.x, 0.0, 1.0);
    const double ei = -neg_ei(u);
    if (out.u.size() == 0 || ei > out.ei) out = {u, ei};
  }
  if (!(out.ei > 0.0)) out = {widest, 0.0};
  return out;
}

double min_distance(const std::vector<Vec>& pts, const Vec& u) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& p : pts) m = std::min(m, (p - u).norm());
  return m;
}

}  // namespace

EgoResult ego_minimize(const std::function<double(const Vec&)>& f, const Vec& lower, const Vec& upper,
                       const EgoOptions& opts) {
  const auto d = static_cast<std::size_t>(lower.size());
  if (d == 0 || upper.size() != lower.size() || !((upper - lower).array() > 0.0).all())
    throw InvalidArgument("EGO needs a non-empty box with lower < upper");
  if (opts.initial_points < 2 || opts.batch == 0) throw InvalidArgument("EGO needs >= 2 initial points and batch >= 1");

  const Vec width = upper - lower;
  auto to_box = [&](const Vec& u) { return Vec(lower + width.cwiseProduct(u)); };
  std::vector<Vec> unit_pts;
  std::vector<double> transformed;
  std::vector<char> failed;
  EgoResult res;
  res.best_value = std::numeric_limits<double>::infinity();

  auto evaluate = [&](const std::vector<Vec>& batch, std::size_t iteration) {
    std::vector<double> vals(batch.size());
    std::vector<char> bad(batch.size(), 0);
    parallel_for(batch.size(), opts.jobs, [&](std::size_t i) {
      try {
        vals[i] = f(to_box(batch[i]));
      } catch (const Error&) {
        vals[i] = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(vals[i]) || (opts.log_values && !(vals[i] > 0.0))) bad[i] = 1;
    });
    for (std::size_t i = 0; i < batch.size(); ++i) {
      EgoRecord rec{iteration, i, to_box(batch[i]), vals[i], 0.0, bad[i] != 0};
      if (!rec.failed && vals[i] < res.best_value) {
        res.best_value = vals[i];
        res.best_x = rec.x;
        res.ok = true;
      }
      rec.incumbent = res.best_value;
      res.history.push_back(std::move(rec));
      unit_pts.push_back(batch[i]);
      transformed.push_back(bad[i] ? 0.0 : (opts.log_values ? std::log(vals[i]) : vals[i]));
      failed.push_back(bad[i]);
    }
  };

  // Failed evaluations enter the surrogate at the worst finite value so the
  // region is avoided without poisoning the fit.
  auto surrogate_values = [&] {
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < transformed.size(); ++i)
      if (!failed[i]) worst = std::max(worst, transformed[i]);
    if (!std::isfinite(worst)) worst = 0.0;
    Vec v(static_cast<Eigen::Index>(transformed.size()));
    for (std::size_t i = 0; i < transformed.size(); ++i)
      v[static_cast<Eigen::Index>(i)] = failed[i] ? worst : transformed[i];
    return v;
  };

  evaluate(latin_hypercube(opts.initial_points, d, opts.seed), 0);

  for (std::size_t it = 1; it <= opts.iterations; ++it) {
    const Vec y = surrogate_values();
    KrigingOptions ko = opts.kriging;
    ko.seed = derive_seed(opts.kriging.seed, Stream::kOptimizer, it);
    Surrogate sur = fit_surrogate(unit_pts, y, ko);
    double best = y.minCoeff();
    std::vector<Vec> batch;
    std::vector<Vec> taken = unit_pts;
    Rng rng(opts.seed, Stream::kOptimizer, it);
    for (std::size_t b = 0; b < opts.batch; ++b) {
      Proposal p = maximize_ei(sur, best, opts, rng);
      if (min_distance(taken, p.u) < 1e-6) p.u = random_unit(rng, d);
      batch.push_back(p.u);
      taken.push_back(p.u);
      if (b + 1 == opts.batch) break;
      const double believed = sur.predict(p.u).mean;
      try {
        sur = sur.with_point(p.u, believed);
      } catch (const NumericalError&) {
        break;
      }
      best = std::min(best, believed);
    }
    while (batch.size() < opts.batch) batch.push_back(random_unit(rng, d));
    evaluate(batch, it);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Macro search

Vec to_search_space(const MacroParams& p) { return (Vec(4) << p.sigma_in, p.leak, p.rho, std::log(p.beta)).finished(); }

MacroParams from_search_space(const Vec& v) {
  if (v.size() != 4) throw InvalidDimension("macro search vector must have 4 entries");
  MacroParams p;
  p.sigma_in = v[0];
  p.leak = v[1];
  p.rho = v[2];
  p.beta = std::exp(v[3]);
  return p;
}

namespace {

MacroSearchResult run_search(const std::function<double(const MacroParams&)>& loss, std::vector<std::size_t> starts,
                             const EgoOptions& opts, const MacroBounds& bounds) {
  const Vec lo = (Vec(4) << bounds.sigma_lo, bounds.leak_lo, bounds.rho_lo, bounds.log_beta_lo).finished();
  const Vec hi = (Vec(4) << bounds.sigma_hi, bounds.leak_hi, bounds.rho_hi, bounds.log_beta_hi).finished();
  MacroSearchResult out;
  out.starts = std::move(starts);
  out.trace = ego_minimize([&](const Vec& v) { return loss(from_search_space(v)); }, lo, hi, opts);
  if (!out.trace.ok) throw Error("macro optimization failed: every candidate evaluation diverged");
  out.best = from_search_space(out.trace.best_x);
  out.best_loss = out.trace.best_value;
  return out;
}

}  // namespace

MacroSearchResult optimize_macro(const Trajectory& train, const Trajectory& validation, const MacroLossSpec& spec,
                                 const EgoOptions& opts, const MacroBounds& bounds) {
  const auto base = ReservoirModel::create({.hidden_dim = spec.hidden_dim,
                                            .input_dim = train.dim(),
                                            .output_dim = train.dim(),
                                            .density = spec.density,
                                            .seed = spec.reservoir_seed},
                                           MacroParams{});
  auto starts = draw_start_steps(validation.length(), spec);
  MacroLossSpec inner = spec;
  inner.jobs = 1;  // candidates already run concurrently
  return run_search(
      [&](const MacroParams& p) { return macro_loss(base, p, train, validation, starts, inner).total; },
      starts, opts, bounds);
}

MacroSearchResult optimize_local_macro(const loc::PatchLayout& layout, const Trajectory& train,
                                       const Trajectory& validation, const MacroLossSpec& spec,
                                       const EgoOptions& opts, const MacroBounds& bounds) {
  auto starts = draw_start_steps(validation.length(), spec);
  MacroLossSpec inner = spec;
  inner.jobs = 1;
  return run_search(
      [&](const MacroParams& p) { return local_macro_loss(layout, p, train, validation, starts, inner).total; },
      starts, opts, bounds);
}

void write_trace_csv(const std::string& path, const EgoResult& result, const std::vector<std::string>& names,
                     const std::vector<std::string>& comments) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  for (const auto& c : comments) f << "# " << c << '\n';
  f << "iteration,slot";
  for (const auto& n : names) f << ',' << n;
  f << ",value,incumbent,failed\n" << std::setprecision(17);
  for (const auto& r : result.history) {
    f << r.iteration << ',' << r.slot;
    for (auto v : r.x) f << ',' << v;
    f << ',' << r.value << ',' << r.incumbent << ',' << (r.failed ? 1 : 0) << '\n';
  }
}

}  // namespace rnnda::macro
