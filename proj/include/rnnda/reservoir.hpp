#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "rnnda/sparse.hpp"
#include "rnnda/trajectory.hpp"
#include "rnnda/types.hpp"

namespace rnnda {

/// The four scalars tuned by global optimization: spectral radius scale,
/// input scale, leak rate and Tikhonov regularizer.
struct MacroParams {
  double rho = 0.1;
  double sigma_in = 0.1;
  double leak = 1.0;
  double beta = 1e-6;

  bool operator==(const MacroParams&) const = default;
};

/// Search box for the macro parameters; beta is searched in log space.
struct MacroBounds {
  double sigma_lo = 0.001, sigma_hi = 1.0;
  double leak_lo = 0.001, leak_hi = 1.0;
  double rho_lo = 0.1, rho_hi = 1.5;
  double log_beta_lo = -18.420680743952367;  // log(1e-8)
  double log_beta_hi = 0.0;

  bool contains(const MacroParams& p) const;
};

struct ModelPreset {
  std::string name;
  std::size_t hidden_dim;
  MacroParams macro;
};

/// Trained macro parameters of the three reference models.
ModelPreset preset(const std::string& name);

struct ReservoirSpec {
  std::size_t hidden_dim = 1600;
  std::size_t input_dim = 6;
  std::size_t output_dim = 6;
  double density = 0.01;
  std::uint64_t seed = 1;
};

struct SpectralRadiusResult {
  double radius = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Dominant eigenvalue modulus by blocked power (subspace) iteration with
/// Rayleigh-Ritz extraction, which also resolves complex-conjugate
/// dominant pairs that defeat single-vector power iteration.
SpectralRadiusResult spectral_radius(const CsrMatrix& a, std::uint64_t seed,
                                     double tol = 1e-8, std::size_t max_iter = 10000);

struct Forecast {
  Mat states;  // D x (n + 1), column 0 is x0
  Mat hidden;  // N x (n + 1), empty unless requested
};

/// Reservoir-style RNN:
///   s' = l tanh(rho W_res s + sigma W_in x) + (1 - l) s,   x' = W_out s'.
/// W_res, W_in and the macro scalars are fixed after construction; only the
/// linear readout is trained. Immutable after training and safe to share.
class ReservoirModel {
 public:
  ReservoirModel() = default;
  /// Assembles a model from stored parts. w_res must already have unit
  /// spectral radius.
  ReservoirModel(CsrMatrix w_res, Mat w_in, RowMat w_out, MacroParams macro,
                 std::uint64_t seed = 0);

  /// Random sparse recurrence rescaled to unit spectral radius and a dense
  /// input map with entries uniform on [-1, 1]. Retries with the next seed
  /// offset when the spectral-radius iteration does not converge.
  static ReservoirModel create(const ReservoirSpec& spec, const MacroParams& macro);

  std::size_t hidden_dim() const { return w_res_.rows; }
  std::size_t input_dim() const { return static_cast<std::size_t>(w_in_.cols()); }
  std::size_t output_dim() const { return output_dim_; }
  std::uint64_t seed() const { return seed_; }
  bool trained() const { return w_out_.size() > 0; }

  const MacroParams& macro() const { return macro_; }
  void set_macro(const MacroParams& macro) { macro_ = macro; }
  const CsrMatrix& w_res() const { return w_res_; }
  const CsrMatrix& w_res_transposed() const { return w_res_t_; }
  const Mat& w_in() const { return w_in_; }
  const RowMat& w_out() const { return w_out_; }
  void set_readout(RowMat w_out);
  /// Declares the readout width before training (needed for untrained saves).
  void set_output_dim(std::size_t d) { output_dim_ = d; }

  /// One teacher-forced step. `out` may alias `s`.
  void step(const Vec& s, const Vec& x, Vec& out) const;
  Vec step(const Vec& s, const Vec& x) const;

  void readout(const Vec& s, Vec& out) const;
  Vec readout(const Vec& s) const;
  /// W_out^T w.
  void readout_transpose(const Vec& w, Vec& out) const;

  /// Feeds the readout back as input: s' = F(s, W_out s).
  void closed_loop_step(const Vec& s, Vec& out) const;

  /// Teacher-forced run over the driving columns. Column j of the result is
  /// the hidden state after consuming driving column j, so its readout
  /// predicts driving column j + 1.
  Mat synchronize(const Mat& driving, const Vec& s0) const;
  Mat synchronize(const Trajectory& driving, const Vec& s0) const {
    return synchronize(driving.states, s0);
  }
  /// Final hidden state only.
  Vec synchronize_final(const Mat& driving, const Vec& s0) const;

  /// Closed-loop forecast from hidden state s0 valid at the time of x0.
  Forecast free_forecast(const Vec& s0, const Vec& x0, std::size_t n_steps,
                         bool keep_hidden = true) const;

  /// Pre-activation of the closed-loop step, (rho W_res + sigma W_in W_out) s.
  void closed_loop_preactivation(const Vec& s, Vec& z) const;

  Vec zero_state() const { return Vec::Zero(static_cast<Eigen::Index>(hidden_dim())); }

 private:
  void require_trained() const;

  CsrMatrix w_res_;
  CsrMatrix w_res_t_;
  Mat w_in_;      // N x D_in
  RowMat w_out_;  // D_out x N
  std::size_t output_dim_ = 0;
  MacroParams macro_;
  std::uint64_t seed_ = 0;
};

/// Tangent linear model of the closed-loop step at s:
///   M = l diag(1 - tanh^2(W s)) W + (1 - l) I,  W = rho W_res + sigma W_in W_out.
/// Holds a reference to the model, which must outlive it.
class RnnPropagator {
 public:
  RnnPropagator(const ReservoirModel& model, const Vec& s);

  void apply(const Vec& v, Vec& out) const;
  void apply_transpose(const Vec& w, Vec& out) const;
  LinearMap as_map() const;
  /// Nonlinear closed-loop successor of the reference state.
  const Vec& next_state() const { return next_; }

 private:
  const ReservoirModel* model_;
  Vec slope_;  // 1 - tanh^2(W s)
  Vec next_;
};

/// Streams hidden/target column batches into the Gram matrices of the ridge
/// normal equations, so training length is not bounded by memory.
class RidgeAccumulator {
 public:
  RidgeAccumulator(std::size_t hidden_dim, std::size_t output_dim);

  /// s_batch: N x B, x_batch: D_out x B.
  void add(const Mat& s_batch, const Mat& x_batch);
  std::size_t count() const { return count_; }

  /// W_out = X S^T (S S^T + beta I)^{-1} via Cholesky.
  RowMat solve(double beta) const;
  /// ||W S - X||^2 + beta ||W||^2 over everything accumulated.
  double objective(const RowMat& w_out, double beta) const;

 private:
  std::size_t n_;
  std::size_t d_;
  Mat gram_;   // upper triangle of S S^T
  Mat cross_;  // X S^T
  double target_sq_ = 0.0;
  std::size_t count_ = 0;
};

/// Dense ridge solution for in-memory data matrices.
RowMat train_readout(const Mat& s_data, const Mat& x_data, double beta);

/// Teacher-forces the model with `inputs` from a zero hidden state, discards
/// `washout` steps and trains the readout so that the hidden state after
/// input column j predicts targets column j. `on_state(j, s)` sees every
/// hidden state when provided.
void fit_readout(ReservoirModel& model, const Mat& inputs, const Mat& targets,
                 std::size_t washout,
                 const std::function<void(std::size_t, const Vec&)>& on_state = {});

/// fit_readout for one-step-ahead prediction of a trajectory.
void fit_readout(ReservoirModel& model, const Trajectory& train, std::size_t washout,
                 const std::function<void(std::size_t, const Vec&)>& on_state = {});

}  // namespace rnnda
