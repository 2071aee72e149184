#include "rnnda/trajectory.hpp"

#include <set>

#include "rnnda/errors.hpp"

namespace rnnda {

void Trajectory::validate() const {
  if (states.cols() < 1) throw InvalidArgument("trajectory needs at least one state");
  if (!(dt > 0.0)) throw InvalidArgument("trajectory dt must be positive");
  if (!states.allFinite()) throw InvalidArgument("trajectory holds non-finite values");
}

Trajectory Trajectory::slice(std::size_t first, std::size_t count) const {
  if (first + count > length()) throw InvalidArgument("trajectory slice out of range");
  Trajectory out;
  out.states = states.middleCols(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(count));
  out.dt = dt;
  out.t0 = time(first);
  return out;
}

Vec ObservationSequence::r_diag() const {
  return Vec::Constant(static_cast<Eigen::Index>(obs_indices.size()), assumed_std * assumed_std);
}

void ObservationSequence::validate(std::size_t system_dim) const {
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw InvalidArgument("observation times must increase");
  }
  std::set<std::size_t> seen;
  for (auto idx : obs_indices) {
    if (idx >= system_dim) throw InvalidArgument("observation index out of range");
    if (!seen.insert(idx).second) throw InvalidArgument("duplicate observation index");
  }
  if (noise_std < 0.0) throw InvalidArgument("noise_std must be non-negative");
}

}  // namespace rnnda
