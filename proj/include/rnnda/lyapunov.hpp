#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "rnnda/assimilation.hpp"
#include "rnnda/types.hpp"

namespace rnnda::lyap {

/// Yields the one-step linear propagator at successive points of a
/// reference trajectory.
class PropagatorStream {
 public:
  virtual ~PropagatorStream() = default;
  virtual std::size_t dim() const = 0;
  virtual LinearMap next() = 0;
};

/// Linearizes a forecast model along its own free-running trajectory.
class ModelStream final : public PropagatorStream {
 public:
  ModelStream(const da::ForecastModel& model, Vec state) : model_(&model), state_(std::move(state)) {}
  std::size_t dim() const override { return model_->state_dim(); }
  LinearMap next() override;
  const Vec& state() const { return state_; }

 private:
  const da::ForecastModel* model_;
  Vec state_;
};

/// The same operator at every step.
class ConstantStream final : public PropagatorStream {
 public:
  explicit ConstantStream(LinearMap map) : map_(std::move(map)) {}
  std::size_t dim() const override { return map_.dim; }
  LinearMap next() override { return map_; }

 private:
  LinearMap map_;
};

struct SpectrumResult {
  std::vector<double> exponents;  // per time unit, non-increasing
  std::size_t restarts = 0;       // rank-collapse re-initializations
};

/// QR (Benettin) recursion of an n_exponents-column tangent basis,
/// re-orthonormalized every step. A collapsed basis is replaced by a fresh
/// random one and counted in `restarts`.
SpectrumResult lyapunov_spectrum(PropagatorStream& stream, std::size_t n_exponents, std::size_t n_steps,
                                 double dt, std::uint64_t seed = 1,
                                 const std::optional<Mat>& initial_basis = std::nullopt);

struct FtleOptions {
  std::uint64_t seed = 1;
  std::optional<Vec> initial;     // random tangent vector when absent
  std::size_t warmup_steps = 0;   // steps that only orient the vector
};

/// Leading finite-time exponent at every horizon 1..horizon_steps from a
/// single tangent vector. The first `warmup_steps` steps of the stream turn
/// the vector toward the leading growth direction and are not accumulated,
/// so horizon 0 is the stream state after the warm-up. Entry h - 1 is the
/// exponent over the first h accumulated steps.
std::vector<double> ftle_curve(PropagatorStream& stream, std::size_t horizon_steps, double dt,
                               const FtleOptions& opts = {});

/// Leading finite-time exponent over horizon_steps.
double ftle(PropagatorStream& stream, std::size_t horizon_steps, double dt, const FtleOptions& opts = {});

struct FtleStats {
  std::vector<double> mean;  // per horizon step
  std::vector<double> std;   // population spread across initial states
};

/// FTLE curves of `model` from each initial state, averaged.
FtleStats ftle_average(const da::ForecastModel& model, const std::vector<Vec>& initial_states,
                       std::size_t horizon_steps, double dt, const FtleOptions& opts = {},
                       std::size_t jobs = 1);

/// Hidden-space image of a system-space perturbation dx under one
/// teacher-forced step at hidden state s with input x:
///   l diag(1 - tanh^2(rho W_res s + sigma W_in x)) sigma W_in dx.
Vec rnn_input_response(const ReservoirModel& model, const Vec& s, const Vec& x, const Vec& dx);

}  // namespace rnnda::lyap
