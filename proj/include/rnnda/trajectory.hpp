#pragma once

#include <cstddef>
#include <vector>

#include "rnnda/types.hpp"

namespace rnnda {

/// System states on a uniform time grid, one column per step.
struct Trajectory {
  Mat states;  // D x T
  double dt = 0.01;
  double t0 = 0.0;

  std::size_t dim() const { return static_cast<std::size_t>(states.rows()); }
  std::size_t length() const { return static_cast<std::size_t>(states.cols()); }
  double time(std::size_t step) const { return t0 + static_cast<double>(step) * dt; }
  auto state(std::size_t step) const { return states.col(static_cast<Eigen::Index>(step)); }

  /// Throws InvalidArgument when T < 1, dt <= 0 or any value is non-finite.
  void validate() const;
  Trajectory slice(std::size_t first, std::size_t count) const;
};

/// Timestamped point observations of a subset of nodes.
struct ObservationSequence {
  std::vector<double> times;
  std::vector<std::size_t> steps;  // step index into the source trajectory
  std::vector<std::size_t> obs_indices;
  Mat values;  // p x n_times
  double noise_std = 0.0;
  double assumed_std = 0.0;

  std::size_t count() const { return times.size(); }
  /// Diagonal of R = sigma_obs^2 I.
  Vec r_diag() const;
  void validate(std::size_t system_dim) const;
};

}  // namespace rnnda
