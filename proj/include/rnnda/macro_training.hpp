#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rnnda/assimilation.hpp"
#include "rnnda/localization.hpp"
#include "rnnda/reservoir.hpp"
#include "rnnda/trajectory.hpp"
#include "rnnda/types.hpp"

namespace rnnda::macro {

// ---------------------------------------------------------------------------
// Long-range forecast loss

struct MacroLossSpec {
  std::size_t forecasts = 100;     // M
  std::size_t horizon = 1000;      // N, steps per forecast
  std::size_t sync_steps = 1000;   // teacher forcing before each forecast start
  std::size_t washout = 1000;      // discarded when fitting the readout
  std::size_t hidden_dim = 1600;
  double density = 0.01;
  std::uint64_t reservoir_seed = 1;
  std::uint64_t start_seed = 1;
  double divergence_scale = 10.0;  // per-forecast cap is N |scale * sigma_clim|^2
  std::size_t jobs = 1;
};

/// M distinct start steps drawn without replacement from
/// [sync_steps, length - 1 - horizon], sorted ascending.
std::vector<std::size_t> draw_start_steps(std::size_t length, const MacroLossSpec& spec);

/// sum_{k=0..N} |f_k - x_k|^2 exp(-k / N) for D x (N + 1) blocks.
double weighted_error(const Mat& forecast, const Mat& truth);

struct LossBreakdown {
  double total = 0.0;
  std::vector<double> per_forecast;
  std::size_t diverged = 0;  // forecasts replaced by the cap
};

/// Forecast loss of an already trained model. Each start j is reached by
/// spinning up on the sync_steps columns ending at j; the forecast then
/// consumes x_j and runs closed loop for `horizon` steps. Non-finite or
/// over-cap forecasts contribute the cap.
LossBreakdown forecast_loss(const da::ForecastModel& model, const Trajectory& data,
                            std::span<const std::size_t> starts, const MacroLossSpec& spec,
                            const Vec& clim_std);

/// Loss divided by M, |sigma_clim|^2 and the summed weights, so that
/// values are comparable across M and N.
double normalized_loss(double loss, std::size_t forecasts, std::size_t horizon, const Vec& clim_std);

/// Trains `base` (fixed recurrence and input map) at `macro` on `train` and
/// scores it on `validation`.
LossBreakdown macro_loss(const ReservoirModel& base, const MacroParams& macro, const Trajectory& train,
                         const Trajectory& validation, std::span<const std::size_t> starts,
                         const MacroLossSpec& spec);

/// Same for a patch layout; every patch shares `macro`.
LossBreakdown local_macro_loss(const loc::PatchLayout& layout, const MacroParams& macro,
                               const Trajectory& train, const Trajectory& validation,
                               std::span<const std::size_t> starts, const MacroLossSpec& spec);

// ---------------------------------------------------------------------------
// Kriging surrogate

struct KrigingOptions {
  double log10_theta_lo = -4.0;
  double log10_theta_hi = 3.0;
  std::size_t restarts = 4;  // likelihood searches started from random points
  std::uint64_t seed = 1;
};

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// Ordinary Kriging with k(a, b) = exp(-sum_d theta_d (a_d - b_d)^2) on
/// points already scaled to the unit box. theta maximizes the concentrated
/// marginal likelihood. A diagonal jitter of 1e-10 is added to the
/// correlation matrix and raised to 1e-8 and then 1e-6 if Cholesky fails.
class Surrogate {
 public:
  std::size_t size() const { return points_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(theta_.size()); }
  const std::vector<Vec>& points() const { return points_; }
  const Vec& values() const { return values_; }
  const Vec& theta() const { return theta_; }
  double process_variance() const { return sigma2_; }
  double mean_level() const { return mu_; }
  double jitter() const { return jitter_; }

  Prediction predict(const Vec& x) const;
  /// Concentrated negative log-likelihood, n log sigma^2 + log det R.
  double neg_log_likelihood() const { return nll_; }
  /// Refit with an extra observation and the same theta.
  Surrogate with_point(const Vec& x, double value) const;

  /// Builds the model for fixed theta. Throws NumericalError when the
  /// correlation matrix stays singular at the largest jitter.
  static Surrogate assemble(std::vector<Vec> points, Vec values, Vec theta);

 private:
  std::vector<Vec> points_;
  Vec values_;
  Vec theta_;
  Mat chol_;       // lower Cholesky factor of R
  Vec alpha_;      // R^-1 (y - mu 1)
  Vec r_inv_one_;  // R^-1 1
  double one_r_one_ = 0.0;
  double mu_ = 0.0;
  double sigma2_ = 0.0;
  double jitter_ = 0.0;
  double nll_ = 0.0;
};

/// Requires at least two distinct points of equal dimension.
Surrogate fit_surrogate(const std::vector<Vec>& points, const Vec& values, const KrigingOptions& opts = {});

/// (best - mu) Phi(z) + s phi(z) with z = (best - mu) / s; zero when s = 0.
double expected_improvement(const Surrogate& s, const Vec& x, double best);
double expected_improvement(double mean, double stddev, double best);

// ---------------------------------------------------------------------------
// Efficient global optimization

struct EgoOptions {
  std::size_t initial_points = 10;  // Latin hypercube
  std::size_t iterations = 15;
  std::size_t batch = 4;
  std::size_t ei_starts = 100;
  std::size_t ei_max_iter = 80;     // Nelder-Mead iterations per start
  bool log_values = false;          // fit the surrogate to log f (f > 0)
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  KrigingOptions kriging;
};

struct EgoRecord {
  std::size_t iteration = 0;  // 0 is the initial design
  std::size_t slot = 0;
  Vec x;
  double value = 0.0;
  double incumbent = 0.0;     // best finite value so far
  bool failed = false;        // non-finite or thrown evaluation
};

struct EgoResult {
  Vec best_x;
  double best_value = 0.0;
  bool ok = false;            // at least one finite evaluation
  std::vector<EgoRecord> history;
};

/// EGO on the box [lower, upper]. Each iteration refits the surrogate and
/// picks `batch` points by maximizing EI with the Kriging believer
/// heuristic; the batch is evaluated concurrently on `jobs` threads.
EgoResult ego_minimize(const std::function<double(const Vec&)>& f, const Vec& lower, const Vec& upper,
                       const EgoOptions& opts);

/// `n` points of a Latin hypercube in [0, 1]^d.
std::vector<Vec> latin_hypercube(std::size_t n, std::size_t d, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Macro parameter search

/// Search coordinates are (sigma_in, leak, rho, log beta).
Vec to_search_space(const MacroParams& p);
MacroParams from_search_space(const Vec& v);

struct MacroSearchResult {
  MacroParams best;
  double best_loss = 0.0;
  EgoResult trace;
  std::vector<std::size_t> starts;
};

/// EGO over the macro box. The start steps are drawn once and shared by
/// every candidate. Throws Error when every evaluation failed.
MacroSearchResult optimize_macro(const Trajectory& train, const Trajectory& validation,
                                 const MacroLossSpec& spec, const EgoOptions& opts,
                                 const MacroBounds& bounds = {});

/// For patch layouts at a reduced per-patch size given by spec.hidden_dim.
MacroSearchResult optimize_local_macro(const loc::PatchLayout& layout, const Trajectory& train,
                                       const Trajectory& validation, const MacroLossSpec& spec,
                                       const EgoOptions& opts, const MacroBounds& bounds = {});

/// iteration,slot,<names...>,value,incumbent,failed
void write_trace_csv(const std::string& path, const EgoResult& result, const std::vector<std::string>& names,
                     const std::vector<std::string>& comments = {});

}  // namespace rnnda::macro
