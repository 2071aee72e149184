#include "rnnda/l96.hpp"

#include <cmath>

#include "rnnda/errors.hpp"
#include "rnnda/rng.hpp"

namespace rnnda::l96 {
namespace {

inline std::size_t wrap(std::ptrdiff_t i, std::size_t d) {
  const auto n = static_cast<std::ptrdiff_t>(d);
  return static_cast<std::size_t>(((i % n) + n) % n);
}

void check_dim(std::size_t d) {
  if (d < 4) throw InvalidDimension("Lorenz-96 needs D >= 4, got " + std::to_string(d));
}

// (J(x) v)_i = v_{i-1}(x_{i+1} - x_{i-2}) + x_{i-1}(v_{i+1} - v_{i-2}) - v_i
void jacobian_apply(const Vec& x, const Vec& v, Vec& out) {
  const std::size_t d = static_cast<std::size_t>(x.size());
  for (std::size_t i = 0; i < d; ++i) {
    const auto ii = static_cast<std::ptrdiff_t>(i);
    const std::size_t m1 = wrap(ii - 1, d), m2 = wrap(ii - 2, d), p1 = wrap(ii + 1, d);
    out[i] = v[m1] * (x[p1] - x[m2]) + x[m1] * (v[p1] - v[m2]) - v[i];
  }
}

// (J(x)^T w)_j = w_{j+1}(x_{j+2} - x_{j-1}) + w_{j-1} x_{j-2} - w_{j+2} x_{j+1} - w_j
void jacobian_apply_transpose(const Vec& x, const Vec& w, Vec& out) {
  const std::size_t d = static_cast<std::size_t>(x.size());
  for (std::size_t j = 0; j < d; ++j) {
    const auto jj = static_cast<std::ptrdiff_t>(j);
    const std::size_t p1 = wrap(jj + 1, d), p2 = wrap(jj + 2, d);
    const std::size_t m1 = wrap(jj - 1, d), m2 = wrap(jj - 2, d);
    out[j] = w[p1] * (x[p2] - x[m1]) + w[m1] * x[m2] - w[p2] * x[p1] - w[j];
  }
}

}  // namespace

void tendency(const Vec& x, double forcing, Vec& out) {
  const std::size_t d = static_cast<std::size_t>(x.size());
  check_dim(d);
  out.resize(x.size());
  for (std::size_t i = 0; i < d; ++i) {
    const auto ii = static_cast<std::ptrdiff_t>(i);
    out[i] = x[wrap(ii - 1, d)] * (x[wrap(ii + 1, d)] - x[wrap(ii - 2, d)]) - x[i] + forcing;
  }
}

Vec tendency(const Vec& x, double forcing) {
  Vec out;
  tendency(x, forcing, out);
  return out;
}

Vec rk4_step(const Vec& x, double dt, double forcing) {
  Vec k1, k2, k3, k4;
  tendency(x, forcing, k1);
  tendency(x + 0.5 * dt * k1, forcing, k2);
  tendency(x + 0.5 * dt * k2, forcing, k3);
  tendency(x + dt * k3, forcing, k4);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Trajectory integrate(const Vec& x0, double dt, std::size_t n_steps, double forcing, double t0) {
  check_dim(static_cast<std::size_t>(x0.size()));
  if (!(dt > 0.0)) throw InvalidArgument("integrate: dt must be positive");
  if (!x0.allFinite()) throw DivergenceError("non-finite initial state", 0);
  Trajectory traj;
  traj.dt = dt;
  traj.t0 = t0;
  traj.states.resize(x0.size(), static_cast<Eigen::Index>(n_steps + 1));
  traj.states.col(0) = x0;
  Vec x = x0;
  for (std::size_t k = 1; k <= n_steps; ++k) {
    x = rk4_step(x, dt, forcing);
    if (!x.allFinite()) throw DivergenceError("Lorenz-96 integration diverged", k);
    traj.states.col(static_cast<Eigen::Index>(k)) = x;
  }
  return traj;
}

Propagator::Propagator(const Vec& x, double dt, double forcing) : dt_(dt) {
  check_dim(static_cast<std::size_t>(x.size()));
  if (!(dt > 0.0)) throw InvalidArgument("propagator: dt must be positive");
  Vec k1, k2, k3, k4;
  stages_[0] = x;
  tendency(stages_[0], forcing, k1);
  stages_[1] = x + 0.5 * dt * k1;
  tendency(stages_[1], forcing, k2);
  stages_[2] = x + 0.5 * dt * k2;
  tendency(stages_[2], forcing, k3);
  stages_[3] = x + dt * k3;
  tendency(stages_[3], forcing, k4);
  next_ = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

void Propagator::apply(const Vec& v, Vec& out) const {
  const auto d = v.size();
  Vec d1(d), d2(d), d3(d), d4(d);
  jacobian_apply(stages_[0], v, d1);
  jacobian_apply(stages_[1], v + 0.5 * dt_ * d1, d2);
  jacobian_apply(stages_[2], v + 0.5 * dt_ * d2, d3);
  jacobian_apply(stages_[3], v + dt_ * d3, d4);
  out = v + (dt_ / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
}

void Propagator::apply_transpose(const Vec& w, Vec& out) const {
  const auto d = w.size();
  Vec a1 = (dt_ / 6.0) * w;
  Vec a2 = (dt_ / 3.0) * w;
  Vec a3 = (dt_ / 3.0) * w;
  const Vec a4 = (dt_ / 6.0) * w;
  Vec acc = w;
  Vec u(d);
  jacobian_apply_transpose(stages_[3], a4, u);
  acc += u;
  a3 += dt_ * u;
  jacobian_apply_transpose(stages_[2], a3, u);
  acc += u;
  a2 += 0.5 * dt_ * u;
  jacobian_apply_transpose(stages_[1], a2, u);
  acc += u;
  a1 += 0.5 * dt_ * u;
  jacobian_apply_transpose(stages_[0], a1, u);
  out = acc + u;
}

LinearMap Propagator::as_map() const {
  LinearMap m;
  m.dim = static_cast<std::size_t>(stages_[0].size());
  m.apply = [p = *this](const Vec& v, Vec& out) { p.apply(v, out); };
  m.apply_transpose = [p = *this](const Vec& w, Vec& out) { p.apply_transpose(w, out); };
  return m;
}

ObservationSequence sample_observations(const Trajectory& truth,
                                        std::vector<std::size_t> obs_indices, double tau_obs,
                                        double sigma_noise, double sigma_obs,
                                        std::uint64_t seed, std::size_t first_step) {
  truth.validate();
  if (!(tau_obs > 0.0)) throw AlignmentError("tau_obs must be positive");
  const double ratio = tau_obs / truth.dt;
  const double stride_f = std::round(ratio);
  if (stride_f < 1.0 || std::abs(ratio - stride_f) > 1e-9 * std::max(1.0, ratio)) {
    throw AlignmentError("tau_obs is not an integer multiple of dt");
  }
  if (sigma_noise < 0.0) throw InvalidArgument("sigma_noise must be non-negative");
  const auto stride = static_cast<std::size_t>(stride_f);

  ObservationSequence obs;
  obs.obs_indices = std::move(obs_indices);
  obs.noise_std = sigma_noise;
  obs.assumed_std = sigma_obs;
  obs.validate(truth.dim());
  for (std::size_t j = first_step; j < truth.length(); j += stride) {
    obs.steps.push_back(j);
    obs.times.push_back(truth.time(j));
  }
  const auto p = static_cast<Eigen::Index>(obs.obs_indices.size());
  obs.values.resize(p, static_cast<Eigen::Index>(obs.steps.size()));
  Rng rng(seed, Stream::kObservationNoise);
  for (std::size_t c = 0; c < obs.steps.size(); ++c) {
    for (Eigen::Index r = 0; r < p; ++r) {
      const double x = truth.states(static_cast<Eigen::Index>(obs.obs_indices[r]),
                                    static_cast<Eigen::Index>(obs.steps[c]));
      obs.values(r, static_cast<Eigen::Index>(c)) =
          sigma_noise > 0.0 ? x + rng.normal(0.0, sigma_noise) : x;
    }
  }
  return obs;
}

Dataset generate_dataset(const DatasetConfig& config) {
  check_dim(config.dim);
  Rng rng(config.seed, Stream::kNature);
  Vec x0(static_cast<Eigen::Index>(config.dim));
  for (Eigen::Index i = 0; i < x0.size(); ++i) x0[i] = config.forcing + rng.normal(0.0, 1.0);
  const std::size_t total = config.spinup_steps + config.train_steps + config.test_steps;
  const Trajectory run = integrate(x0, config.dt, total - 1, config.forcing, 0.0);
  Dataset ds;
  ds.train = run.slice(config.spinup_steps, config.train_steps);
  ds.test = run.slice(config.spinup_steps + config.train_steps, config.test_steps);
  return ds;
}

}  // namespace rnnda::l96
