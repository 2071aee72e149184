#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "rnnda/trajectory.hpp"
#include "rnnda/types.hpp"

namespace rnnda::l96 {

inline constexpr double kDefaultForcing = 8.0;

/// dx_i/dt = x_{i-1} (x_{i+1} - x_{i-2}) - x_i + F on a cyclic domain.
void tendency(const Vec& x, double forcing, Vec& out);
Vec tendency(const Vec& x, double forcing = kDefaultForcing);

Vec rk4_step(const Vec& x, double dt, double forcing = kDefaultForcing);

/// Classical RK4. Returns n_steps + 1 states starting with x0.
Trajectory integrate(const Vec& x0, double dt, std::size_t n_steps,
                     double forcing = kDefaultForcing, double t0 = 0.0);

/// Jacobian of one RK4 step at a reference state, applied matrix-free.
class Propagator {
 public:
  Propagator(const Vec& x, double dt, double forcing = kDefaultForcing);

  void apply(const Vec& v, Vec& out) const;
  void apply_transpose(const Vec& w, Vec& out) const;
  LinearMap as_map() const;
  /// State reached by the nonlinear step from the reference point.
  const Vec& next_state() const { return next_; }

 private:
  double dt_;
  Vec stages_[4];
  Vec next_;
};

ObservationSequence sample_observations(const Trajectory& truth,
                                        std::vector<std::size_t> obs_indices,
                                        double tau_obs, double sigma_noise,
                                        double sigma_obs, std::uint64_t seed,
                                        std::size_t first_step = 0);

struct DatasetConfig {
  std::size_t dim = 6;
  double forcing = kDefaultForcing;
  double dt = 0.01;
  std::size_t spinup_steps = 1000;
  std::size_t train_steps = 100000;
  std::size_t test_steps = 20000;
  std::uint64_t seed = 1;
};

struct Dataset {
  Trajectory train;
  Trajectory test;
};

/// One spun-up nature run split into disjoint train and test segments.
Dataset generate_dataset(const DatasetConfig& config);

}  // namespace rnnda::l96
