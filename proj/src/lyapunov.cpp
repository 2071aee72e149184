#include "rnnda/lyapunov.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>

#include "rnnda/errors.hpp"
#include "rnnda/parallel.hpp"
#include "rnnda/rng.hpp"

namespace rnnda::lyap {

LinearMap ModelStream::next() {
  da::StepLinearization lin = model_->linearize(state_);
  if (!lin.next.allFinite()) throw DivergenceError("Lyapunov reference trajectory is not finite", 0);
  state_ = std::move(lin.next);
  return std::move(lin.tangent);
}

namespace {

Mat random_orthonormal(std::size_t dim, std::size_t n, Rng& rng) {
  Mat a(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Mat> qr(a);
  return qr.householderQ() * Mat::Identity(a.rows(), a.cols());
}

}  // namespace

SpectrumResult lyapunov_spectrum(PropagatorStream& stream, std::size_t n_exponents, std::size_t n_steps,
                                 double dt, std::uint64_t seed, const std::optional<Mat>& initial_basis) {
  const std::size_t dim = stream.dim();
  if (n_exponents < 1 || n_exponents > dim) throw InvalidArgument("lyapunov_spectrum: bad exponent count");
  if (n_steps < 1 || !(dt > 0.0)) throw InvalidArgument("lyapunov_spectrum: need steps and dt > 0");
  Rng rng(seed, Stream::kTangent);
  const auto n = static_cast<Eigen::Index>(n_exponents);
  Mat q;
  if (initial_basis) {
    if (initial_basis->rows() != static_cast<Eigen::Index>(dim) || initial_basis->cols() != n)
      throw InvalidDimension("lyapunov_spectrum: initial basis shape");
    Eigen::HouseholderQR<Mat> qr(*initial_basis);
    q = qr.householderQ() * Mat::Identity(static_cast<Eigen::Index>(dim), n);
  } else {
    q = random_orthonormal(dim, n_exponents, rng);
  }
  SpectrumResult out;
  Vec sums = Vec::Zero(n);
  Mat z(static_cast<Eigen::Index>(dim), n);
  Vec col_out(static_cast<Eigen::Index>(dim));
  for (std::size_t step = 0; step < n_steps; ++step) {
    const LinearMap m = stream.next();
    for (Eigen::Index j = 0; j < n; ++j) {
      m.apply(q.col(j), col_out);
      z.col(j) = col_out;
    }
    Eigen::HouseholderQR<Mat> qr(z);
    const Mat r = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
    const Vec diag = r.diagonal().cwiseAbs();
    if (!diag.allFinite() || !(diag.minCoeff() > 1e-300)) {
      std::cerr << "warning: tangent basis collapsed at step " << step << "; re-initializing\n";
      q = random_orthonormal(dim, n_exponents, rng);
      ++out.restarts;
      continue;
    }
    sums.array() += diag.array().log();
    q = qr.householderQ() * Mat::Identity(static_cast<Eigen::Index>(dim), n);
  }
  out.exponents.resize(n_exponents);
  for (Eigen::Index j = 0; j < n; ++j) out.exponents[static_cast<std::size_t>(j)] = sums[j] / (static_cast<double>(n_steps) * dt);
  std::sort(out.exponents.begin(), out.exponents.end(), std::greater<>());
  return out;
}

std::vector<double> ftle_curve(PropagatorStream& stream, std::size_t horizon_steps, double dt,
                               const FtleOptions& opts) {
  if (horizon_steps < 1 || !(dt > 0.0)) throw InvalidArgument("ftle: need horizon >= 1 and dt > 0");
  const auto dim = static_cast<Eigen::Index>(stream.dim());
  Vec v(dim);
  if (opts.initial) {
    if (opts.initial->size() != dim) throw InvalidDimension("ftle: initial tangent size");
    v = *opts.initial;
  } else {
    Rng rng(opts.seed, Stream::kTangent);
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = rng.normal();
  }
  const double n0 = v.norm();
  if (!(n0 > 0.0)) throw InvalidArgument("ftle: zero initial tangent");
  v /= n0;
  Vec w(dim);
  for (std::size_t k = 0; k < opts.warmup_steps; ++k) {
    stream.next().apply(v, w);
    const double g = w.norm();
    if (!(g > 1e-300) || !std::isfinite(g)) throw NumericalError("ftle: tangent vector collapsed");
    v = w / g;
  }
  std::vector<double> curve(horizon_steps);
  double log_growth = 0.0;
  for (std::size_t h = 0; h < horizon_steps; ++h) {
    stream.next().apply(v, w);
    const double g = w.norm();
    if (!(g > 1e-300) || !std::isfinite(g)) throw NumericalError("ftle: tangent vector collapsed");
    log_growth += std::log(g);
    v = w / g;
    curve[h] = log_growth / (static_cast<double>(h + 1) * dt);
  }
  return curve;
}

double ftle(PropagatorStream& stream, std::size_t horizon_steps, double dt, const FtleOptions& opts) {
  return ftle_curve(stream, horizon_steps, dt, opts).back();
}

FtleStats ftle_average(const da::ForecastModel& model, const std::vector<Vec>& initial_states,
                       std::size_t horizon_steps, double dt, const FtleOptions& opts, std::size_t jobs) {
  if (initial_states.empty()) throw InvalidArgument("ftle_average: no initial states");
  std::vector<std::vector<double>> curves(initial_states.size());
  parallel_for(initial_states.size(), jobs, [&](std::size_t i) {
    ModelStream stream(model, initial_states[i]);
    FtleOptions o = opts;
    o.seed = derive_seed(opts.seed, Stream::kTangent, i);
    curves[i] = ftle_curve(stream, horizon_steps, dt, o);
  });
  FtleStats out;
  out.mean.assign(horizon_steps, 0.0);
  out.std.assign(horizon_steps, 0.0);
  const double n = static_cast<double>(curves.size());
  for (std::size_t h = 0; h < horizon_steps; ++h) {
    double sum = 0.0, sq = 0.0;
    for (const auto& c : curves) {
      sum += c[h];
      sq += c[h] * c[h];
    }
    out.mean[h] = sum / n;
    out.std[h] = std::sqrt(std::max(0.0, sq / n - out.mean[h] * out.mean[h]));
  }
  return out;
}

Vec rnn_input_response(const ReservoirModel& model, const Vec& s, const Vec& x, const Vec& dx) {
  const auto& p = model.macro();
  const Vec z_next = model.step(s, x);  // l tanh(z) + (1 - l) s
  const Vec t = p.leak > 0.0 ? Vec((z_next - (1.0 - p.leak) * s) / p.leak) : Vec::Zero(s.size());
  const Vec slope = (1.0 - t.array().square()).matrix();
  return p.leak * slope.cwiseProduct(p.sigma_in * (model.w_in() * dx));
}

}  // namespace rnnda::lyap
