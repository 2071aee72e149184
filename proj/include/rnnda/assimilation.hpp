#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rnnda/reservoir.hpp"
#include "rnnda/trajectory.hpp"
#include "rnnda/types.hpp"

namespace rnnda::da {

/// Replaces the observed components of x_b with y.
Vec direct_insertion(const Vec& x_b, const Vec& y, const std::vector<std::size_t>& obs_indices);

// ---------------------------------------------------------------------------
// ETKF

/// Ensemble-space quantities of one ETKF analysis.
struct EtkfTransform {
  Vec w_mean;     // k, mean-update weights
  Mat w_a;        // k x k, symmetric perturbation transform
  Mat p_tilde;    // k x k, analysis covariance in ensemble space
  double min_eigenvalue = 0.0;  // of P_tilde^{-1}
};

/// predicted: p x k predicted observations of the background members.
/// Throws NumericalError when P_tilde^{-1} has an eigenvalue below 1e-12.
EtkfTransform etkf_transform(const Mat& predicted, const Vec& y, const Vec& r_diag, double inflation);

/// Analysis members  mean + S_b (w_mean 1^T + W_a)  for an N x k block.
Mat apply_transform(const Mat& members, const EtkfTransform& t);

struct EtkfResult {
  Mat members;                  // analysis ensemble, same layout as the input
  EtkfTransform transform;
  std::optional<Mat> gain;      // N x p, only when requested
};

/// Analysis of an N x k ensemble given its p x k predicted observations.
EtkfResult etkf_update(const Mat& members, const Mat& predicted, const Vec& y, const Vec& r_diag,
                       double inflation, bool want_gain = false);

/// As above with the predicted observations computed member by member.
EtkfResult etkf_update_with(const Mat& members, const std::function<Vec(const Vec&)>& obs_op,
                            const Vec& y, const Vec& r_diag, double inflation, bool want_gain = false);

// ---------------------------------------------------------------------------
// Linear solver

struct SolveResult {
  Vec x;
  double residual_norm = 0.0;  // true residual ||b - A x|| at exit
  std::size_t iterations = 0;
  bool converged = false;
  bool restarted = false;
};

/// BiCGSTAB from x0 = 0. Stops when ||b - A x|| <= tol ||b||. On a breakdown
/// it restarts once from the current iterate with a perturbed shadow
/// residual; a second breakdown throws NumericalError.
SolveResult bicgstab(const std::function<void(const Vec&, Vec&)>& apply_a, const Vec& b,
                     double tol, std::size_t max_iter, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Forecast models

/// Linearization of one model step about a reference state.
struct StepLinearization {
  LinearMap tangent;
  Vec next;
};

/// Rows of the analysis state updated by one local analysis, and the system
/// nodes whose observations it may use.
struct AnalysisDomain {
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
  std::vector<std::size_t> visible_nodes;  // sorted; empty means every node
};

/// Model advanced by the cycling loop. The analysis state is a numerical
/// system state or a network hidden state; `to_system` maps it to system
/// space and must be linear whenever 4D-Var is used.
class ForecastModel {
 public:
  virtual ~ForecastModel() = default;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t system_dim() const = 0;
  virtual void to_system(const Vec& state, Vec& x) const = 0;
  /// Transpose of a linear `to_system`.
  virtual void to_system_transpose(const Vec& x, Vec& state) const;
  /// One step driven by the system-space input x_in.
  virtual void step_from(Vec& state, const Vec& x_in) const = 0;
  /// One free-running step.
  virtual void step(Vec& state) const;
  virtual StepLinearization linearize(const Vec& state) const;
  /// State valid at the time of the last column of `history`.
  virtual Vec spin_up(const Mat& history) const = 0;
  virtual std::vector<AnalysisDomain> analysis_domains() const;
  virtual std::string name() const = 0;

  Vec system(const Vec& state) const;
  void advance(Vec& state, std::size_t n_steps) const;
};

/// The numerical model: state is the system state.
class L96Forecaster final : public ForecastModel {
 public:
  L96Forecaster(std::size_t dim, double dt, double forcing = 8.0);
  std::size_t state_dim() const override { return dim_; }
  std::size_t system_dim() const override { return dim_; }
  void to_system(const Vec& state, Vec& x) const override { x = state; }
  void to_system_transpose(const Vec& x, Vec& state) const override { state = x; }
  void step_from(Vec& state, const Vec& x_in) const override;
  StepLinearization linearize(const Vec& state) const override;
  Vec spin_up(const Mat& history) const override;
  std::string name() const override { return "l96"; }

 private:
  std::size_t dim_;
  double dt_;
  double forcing_;
};

/// A trained reservoir model: state is the hidden state.
class RnnForecaster final : public ForecastModel {
 public:
  /// Holds a reference; the model must outlive the forecaster.
  explicit RnnForecaster(const ReservoirModel& model);
  std::size_t state_dim() const override { return model_->hidden_dim(); }
  std::size_t system_dim() const override { return model_->output_dim(); }
  void to_system(const Vec& state, Vec& x) const override { model_->readout(state, x); }
  void to_system_transpose(const Vec& x, Vec& state) const override {
    model_->readout_transpose(x, state);
  }
  void step_from(Vec& state, const Vec& x_in) const override { model_->step(state, x_in, state); }
  void step(Vec& state) const override { model_->closed_loop_step(state, state); }
  StepLinearization linearize(const Vec& state) const override;
  /// Synchronizes from zero on every column but the last.
  Vec spin_up(const Mat& history) const override;
  std::string name() const override { return "rnn"; }
  const ReservoirModel& model() const { return *model_; }

 private:
  const ReservoirModel* model_;
};

/// Nonlinear trajectory and step linearizations from s0, for products
/// M_[t,0] = M_{t-1} ... M_0.
class TangentChain {
 public:
  TangentChain(const ForecastModel& model, const Vec& s0, std::size_t n_steps);
  std::size_t steps() const { return steps_.size(); }
  const Vec& state(std::size_t t) const { return states_[t]; }
  Vec forward(const Vec& v, std::size_t t) const;
  Vec adjoint(const Vec& w, std::size_t t) const;
  const LinearMap& step_map(std::size_t t) const { return steps_[t]; }

 private:
  std::vector<Vec> states_;
  std::vector<LinearMap> steps_;
};

// ---------------------------------------------------------------------------
// 4D-Var

struct VarConfig {
  double sigma_b = 0.5;
  std::size_t outer_loops = 2;
  double inner_tol = 1e-6;
  std::size_t inner_max_iter = 500;
};

/// Observations inside one assimilation window. Steps are relative to the
/// window start.
struct ObsWindow {
  std::vector<std::size_t> steps;
  std::vector<Vec> values;
  std::vector<std::size_t> obs_indices;
  Vec r_diag;
};

struct OuterLoopStats {
  double cost_before = 0.0;       // nonlinear J at the loop's first guess
  double cost_b = 0.0;
  double cost_o = 0.0;
  std::size_t inner_iterations = 0;
  double gradient_ratio = 0.0;    // ||grad J(ds)|| / ||grad J(0)|| of the quadratic problem
  bool inner_converged = false;
};

struct VarResult {
  Vec s_a0;
  std::vector<OuterLoopStats> loops;
  double final_cost = 0.0;
  bool converged = true;  // every inner solve converged
};

/// Nonlinear strong-constraint cost
///   J = 1/2 |s0 - s_b0|^2 / sigma_b^2 + 1/2 sum_t |y_t - H G s(t)|^2_R.
/// Returns {J_b, J_o}.
std::pair<double, double> fourdvar_cost(const ForecastModel& model, const Vec& s0, const Vec& s_b0,
                                        const ObsWindow& window, double sigma_b);

/// Incremental 4D-Var with outer re-linearization. Each inner loop solves
///   (I + B sum_t M_t^T G^T H^T R^-1 H G M_t) ds = ds_b + B sum_t M_t^T G^T H^T R^-1 d_t
/// by BiCGSTAB, which is B times the stationarity condition of the quadratic cost.
VarResult fourdvar_analysis(const ForecastModel& model, const Vec& s_f0, const Vec& s_b0,
                            const ObsWindow& window, const VarConfig& cfg);

// ---------------------------------------------------------------------------
// Cycling

enum class Scheme { kFree, kDirectInsertion, kEtkf, kFourDVar };
Scheme parse_scheme(const std::string& name);
std::string scheme_name(Scheme s);

struct CycleConfig {
  Scheme scheme = Scheme::kEtkf;
  std::size_t ensemble_size = 10;
  double inflation = 1.2;
  double tau_da = 0.2;
  double duration = 100.0;            // MTU
  double sigma_init = 0.5;
  std::size_t spinup_steps = 1000;    // perturbed synchronization window
  double initial_offset = 0.0;        // shared displacement of the spinup end, in climatological stds
  std::size_t initial_offset_steps = 100;
  double summary_start = 50.0;        // MTU, start of the scored window
  double divergence_nrmse = 10.0;
  std::size_t divergence_cycles = 50;
  VarConfig var;
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  std::vector<std::size_t> domain_order;  // optional permutation of analysis domains
};

struct CycleRecord {
  double time = 0.0;
  std::size_t step = 0;
  double nrmse_obs = 0.0, nrmse_unobs = 0.0, nrmse_all = 0.0;   // analysis
  double bg_nrmse_obs = 0.0, bg_nrmse_unobs = 0.0, bg_nrmse_all = 0.0;
  double rmse_all = 0.0;        // analysis, model units
  double spread = 0.0;          // mean ensemble std in system space
  double innovation_mean = 0.0;
  double innovation_var = 0.0;
  std::size_t n_obs = 0;
  double gradient_ratio = 0.0;  // worst outer loop, 4D-Var only
  bool inner_converged = true;
};

struct CycleSummary {
  double nrmse_obs = 0.0, nrmse_unobs = 0.0, nrmse_all = 0.0, rmse_all = 0.0;
  std::size_t cycles = 0;
};

struct CycleResult {
  std::vector<CycleRecord> records;
  Mat analysis;                 // D x cycles, system-space analysis means
  bool diverged = false;
  std::optional<std::size_t> diverged_at;
  std::string divergence_reason;
  CycleSummary summary;
  double max_gradient_ratio = 0.0;
  bool all_inner_converged = true;
};

/// Runs the forecast-analysis loop. `truth` column 0 is the first analysis
/// time and must cover the whole experiment; `spinup_truth` holds the
/// spinup_steps states preceding it. Observation steps index `truth`.
CycleResult cycle_da(const ForecastModel& model, const Trajectory& spinup_truth,
                     const Trajectory& truth, const ObservationSequence& obs,
                     const Vec& clim_std, const CycleConfig& cfg);

/// Time mean over records from `start_time` on.
CycleSummary summarize(const std::vector<CycleRecord>& records, double start_time);

/// Writes the per-cycle diagnostics as CSV (with '#' comment lines first).
void write_cycle_csv(const std::string& path, const CycleResult& result,
                     const std::vector<std::string>& comments = {});

}  // namespace rnnda::da
