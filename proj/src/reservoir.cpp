#include "rnnda/reservoir.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <algorithm>
#include <boost/random/binomial_distribution.hpp>
#include <cblas.h>
#include <cmath>
#include <unordered_set>

#include "rnnda/errors.hpp"
#include "rnnda/kernels.hpp"
#include "rnnda/rng.hpp"

namespace rnnda {
namespace {

std::span<const double> view(const Vec& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<double> view(Vec& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

Mat orthonormal_columns(const Mat& z) {
  Eigen::HouseholderQR<Mat> qr(z);
  return qr.householderQ() * Mat::Identity(z.rows(), z.cols());
}

CsrMatrix random_sparse(std::size_t n, double density, Rng& rng) {
  std::vector<Triplet> triplets;
  triplets.reserve(static_cast<std::size_t>(density * static_cast<double>(n) * static_cast<double>(n) * 1.1) + 16);
  boost::random::binomial_distribution<std::int64_t> count_dist(static_cast<std::int64_t>(n), density);
  std::unordered_set<std::size_t> picked;
  for (std::size_t r = 0; r < n; ++r) {
    const auto c = static_cast<std::size_t>(count_dist(rng.engine()));
    // Floyd's sampling of c distinct columns.
    picked.clear();
    for (std::size_t j = n - c; j < n; ++j) {
      const std::size_t t = rng.below(j + 1);
      if (!picked.insert(t).second) picked.insert(j);
    }
    std::vector<std::size_t> cols(picked.begin(), picked.end());
    std::sort(cols.begin(), cols.end());
    for (auto col : cols) triplets.push_back({r, col, rng.uniform(-1.0, 1.0)});
  }
  return csr_from_triplets(n, n, std::move(triplets));
}

}  // namespace

bool MacroBounds::contains(const MacroParams& p) const {
  const double lb = std::log(p.beta);
  return p.sigma_in >= sigma_lo && p.sigma_in <= sigma_hi && p.leak >= leak_lo &&
         p.leak <= leak_hi && p.rho >= rho_lo && p.rho <= rho_hi &&
         lb >= log_beta_lo - 1e-12 && lb <= log_beta_hi + 1e-12;
}

ModelPreset preset(const std::string& name) {
  if (name == "model1") {
    return {name, 1600, {0.10036271, 0.06627321, 0.70270733, std::exp(-18.41726026)}};
  }
  if (name == "model2") {
    return {name, 800, {0.10000000, 0.05343709, 0.69460913, std::exp(-14.33030495)}};
  }
  if (name == "model3") {
    return {name, 6000, {0.34378377, 0.05219330, 0.40813549, std::exp(-12.53138825)}};
  }
  throw InvalidArgument("unknown model preset '" + name + "'");
}

SpectralRadiusResult spectral_radius(const CsrMatrix& a, std::uint64_t seed, double tol,
                                     std::size_t max_iter) {
  if (a.rows != a.cols || a.rows == 0) throw InvalidDimension("spectral_radius: square matrix required");
  const auto n = static_cast<Eigen::Index>(a.rows);
  const Eigen::Index p = std::min<Eigen::Index>(n, 24);
  Rng rng(seed, Stream::kReservoir, 0x5eed);
  Mat q(n, p);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = 0; i < n; ++i) q(i, j) = rng.normal();
  q = orthonormal_columns(q);

  Mat z(n, p);
  Vec in(n), out(n);
  SpectralRadiusResult res;
  double previous = -1.0;
  std::size_t stable = 0;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    for (Eigen::Index j = 0; j < p; ++j) {
      in = q.col(j);
      kernels::csr_matvec(a, view(in), view(out));
      z.col(j) = out;
    }
    const Mat h = q.transpose() * z;
    Eigen::EigenSolver<Mat> es(h, false);
    const double radius = es.eigenvalues().cwiseAbs().maxCoeff();
    res.radius = radius;
    res.iterations = it;
    if (!std::isfinite(radius)) break;
    if (radius == 0.0) {
      res.converged = z.norm() == 0.0;
      break;
    }
    if (previous >= 0.0 && std::abs(radius - previous) <= tol * radius) {
      if (++stable >= 3) {
        res.converged = true;
        break;
      }
    } else {
      stable = 0;
    }
    previous = radius;
    q = orthonormal_columns(z);
  }
  return res;
}

ReservoirModel::ReservoirModel(CsrMatrix w_res, Mat w_in, RowMat w_out, MacroParams macro,
                               std::uint64_t seed)
    : w_res_(std::move(w_res)), w_in_(std::move(w_in)), macro_(macro), seed_(seed) {
  if (w_res_.rows != w_res_.cols) throw InvalidDimension("W_res must be square");
  if (static_cast<std::size_t>(w_in_.rows()) != w_res_.rows) throw InvalidDimension("W_in rows must equal N");
  w_res_t_ = w_res_.transposed();
  if (w_out.size() > 0) {
    set_readout(std::move(w_out));
  }
}

ReservoirModel ReservoirModel::create(const ReservoirSpec& spec, const MacroParams& macro) {
  if (spec.hidden_dim == 0) throw InvalidDimension("hidden dimension must be positive");
  if (!(spec.density > 0.0 && spec.density <= 1.0)) throw InvalidArgument("density must lie in (0, 1]");
  constexpr int kAttempts = 5;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    const std::uint64_t seed = spec.seed + static_cast<std::uint64_t>(attempt);
    Rng rng(seed, Stream::kReservoir);
    CsrMatrix w_res = random_sparse(spec.hidden_dim, spec.density, rng);
    const auto sr = spectral_radius(w_res, seed);
    if (!sr.converged || !(sr.radius > 0.0)) continue;
    w_res.scale(1.0 / sr.radius);
    Mat w_in(static_cast<Eigen::Index>(spec.hidden_dim), static_cast<Eigen::Index>(spec.input_dim));
    for (Eigen::Index j = 0; j < w_in.cols(); ++j)
      for (Eigen::Index i = 0; i < w_in.rows(); ++i) w_in(i, j) = rng.uniform(-1.0, 1.0);
    ReservoirModel model(std::move(w_res), std::move(w_in), RowMat(), macro, seed);
    model.output_dim_ = spec.output_dim;
    return model;
  }
  throw NumericalError("reservoir init: spectral radius iteration did not converge after " +
                       std::to_string(kAttempts) + " seeds");
}

void ReservoirModel::set_readout(RowMat w_out) {
  if (static_cast<std::size_t>(w_out.cols()) != hidden_dim()) throw InvalidDimension("W_out must have N columns");
  output_dim_ = static_cast<std::size_t>(w_out.rows());
  w_out_ = std::move(w_out);
}

void ReservoirModel::require_trained() const {
  if (!trained()) throw NotTrained("reservoir readout has not been trained");
}

void ReservoirModel::step(const Vec& s, const Vec& x, Vec& out) const {
  if (static_cast<std::size_t>(x.size()) != input_dim()) throw InvalidDimension("step: input size mismatch");
  const auto n = static_cast<Eigen::Index>(hidden_dim());
  Vec z(n);
  kernels::csr_matvec(w_res_, view(s), view(z));
  z *= macro_.rho;
  for (Eigen::Index j = 0; j < w_in_.cols(); ++j) {
    kernels::axpy(macro_.sigma_in * x[j], {w_in_.col(j).data(), static_cast<std::size_t>(n)}, view(z));
  }
  out.resize(n);
  kernels::leaky_tanh(macro_.leak, view(z), view(s), view(out));
}

Vec ReservoirModel::step(const Vec& s, const Vec& x) const {
  Vec out;
  step(s, x, out);
  return out;
}

void ReservoirModel::readout(const Vec& s, Vec& out) const {
  require_trained();
  out.resize(w_out_.rows());
  const auto n = static_cast<std::size_t>(w_out_.cols());
  for (Eigen::Index k = 0; k < w_out_.rows(); ++k) {
    out[k] = kernels::dot({w_out_.row(k).data(), n}, view(s));
  }
}

Vec ReservoirModel::readout(const Vec& s) const {
  Vec out;
  readout(s, out);
  return out;
}

void ReservoirModel::readout_transpose(const Vec& w, Vec& out) const {
  require_trained();
  const auto n = static_cast<std::size_t>(w_out_.cols());
  out = Vec::Zero(static_cast<Eigen::Index>(n));
  for (Eigen::Index k = 0; k < w_out_.rows(); ++k) {
    kernels::axpy(w[k], {w_out_.row(k).data(), n}, view(out));
  }
}

void ReservoirModel::closed_loop_preactivation(const Vec& s, Vec& z) const {
  if (input_dim() != output_dim()) throw InvalidDimension("closed loop requires D_in == D_out");
  const auto n = static_cast<Eigen::Index>(hidden_dim());
  Vec x;
  readout(s, x);
  z.resize(n);
  kernels::csr_matvec(w_res_, view(s), view(z));
  z *= macro_.rho;
  for (Eigen::Index j = 0; j < w_in_.cols(); ++j) {
    kernels::axpy(macro_.sigma_in * x[j], {w_in_.col(j).data(), static_cast<std::size_t>(n)}, view(z));
  }
}

void ReservoirModel::closed_loop_step(const Vec& s, Vec& out) const {
  Vec x;
  readout(s, x);
  step(s, x, out);
}

Mat ReservoirModel::synchronize(const Mat& driving, const Vec& s0) const {
  if (static_cast<std::size_t>(driving.rows()) != input_dim()) throw InvalidDimension("synchronize: driving dimension mismatch");
  Mat hidden(static_cast<Eigen::Index>(hidden_dim()), driving.cols());
  Vec s = s0;
  Vec x;
  for (Eigen::Index j = 0; j < driving.cols(); ++j) {
    x = driving.col(j);
    step(s, x, s);
    hidden.col(j) = s;
  }
  return hidden;
}

Vec ReservoirModel::synchronize_final(const Mat& driving, const Vec& s0) const {
  if (static_cast<std::size_t>(driving.rows()) != input_dim()) throw InvalidDimension("synchronize: driving dimension mismatch");
  Vec s = s0;
  Vec x;
  for (Eigen::Index j = 0; j < driving.cols(); ++j) {
    x = driving.col(j);
    step(s, x, s);
  }
  return s;
}

Forecast ReservoirModel::free_forecast(const Vec& s0, const Vec& x0, std::size_t n_steps,
                                       bool keep_hidden) const {
  require_trained();
  if (output_dim() != input_dim()) throw InvalidDimension("free_forecast requires D_in == D_out");
  Forecast fc;
  const auto cols = static_cast<Eigen::Index>(n_steps + 1);
  fc.states.resize(static_cast<Eigen::Index>(output_dim()), cols);
  fc.states.col(0) = x0;
  if (keep_hidden) {
    fc.hidden.resize(static_cast<Eigen::Index>(hidden_dim()), cols);
    fc.hidden.col(0) = s0;
  }
  Vec s = s0;
  Vec x = x0;
  for (std::size_t k = 1; k <= n_steps; ++k) {
    step(s, x, s);
    readout(s, x);
    if (!x.allFinite() || !s.allFinite()) throw DivergenceError("reservoir forecast diverged", k);
    fc.states.col(static_cast<Eigen::Index>(k)) = x;
    if (keep_hidden) fc.hidden.col(static_cast<Eigen::Index>(k)) = s;
  }
  return fc;
}

RnnPropagator::RnnPropagator(const ReservoirModel& model, const Vec& s) : model_(&model) {
  Vec z;
  model.closed_loop_preactivation(s, z);
  slope_.resize(z.size());
  kernels::tanh_slope(view(z), view(slope_));
  next_.resize(z.size());
  kernels::leaky_tanh(model.macro().leak, view(z), view(s), view(next_));
}

void RnnPropagator::apply(const Vec& v, Vec& out) const {
  const auto& m = *model_;
  const auto n = static_cast<Eigen::Index>(m.hidden_dim());
  const auto& macro = m.macro();
  Vec wv(n);
  kernels::csr_matvec(m.w_res(), view(v), view(wv));
  wv *= macro.rho;
  Vec xo;
  m.readout(v, xo);
  for (Eigen::Index j = 0; j < m.w_in().cols(); ++j) {
    kernels::axpy(macro.sigma_in * xo[j], {m.w_in().col(j).data(), static_cast<std::size_t>(n)}, view(wv));
  }
  out = macro.leak * slope_.cwiseProduct(wv) + (1.0 - macro.leak) * v;
}

void RnnPropagator::apply_transpose(const Vec& w, Vec& out) const {
  const auto& m = *model_;
  const auto n = static_cast<Eigen::Index>(m.hidden_dim());
  const auto& macro = m.macro();
  const Vec u = macro.leak * slope_.cwiseProduct(w);
  Vec acc(n);
  kernels::csr_matvec(m.w_res_transposed(), view(u), view(acc));
  acc *= macro.rho;
  Vec win_t(m.w_in().cols());
  for (Eigen::Index j = 0; j < m.w_in().cols(); ++j) {
    win_t[j] = macro.sigma_in * kernels::dot({m.w_in().col(j).data(), static_cast<std::size_t>(n)}, view(u));
  }
  Vec back;
  m.readout_transpose(win_t, back);
  out = acc + back + (1.0 - macro.leak) * w;
}

LinearMap RnnPropagator::as_map() const {
  LinearMap map;
  map.dim = model_->hidden_dim();
  map.apply = [p = *this](const Vec& v, Vec& out) { p.apply(v, out); };
  map.apply_transpose = [p = *this](const Vec& w, Vec& out) { p.apply_transpose(w, out); };
  return map;
}

RidgeAccumulator::RidgeAccumulator(std::size_t hidden_dim, std::size_t output_dim)
    : n_(hidden_dim),
      d_(output_dim),
      gram_(Mat::Zero(static_cast<Eigen::Index>(hidden_dim), static_cast<Eigen::Index>(hidden_dim))),
      cross_(Mat::Zero(static_cast<Eigen::Index>(output_dim), static_cast<Eigen::Index>(hidden_dim))) {}

void RidgeAccumulator::add(const Mat& s_batch, const Mat& x_batch) {
  if (static_cast<std::size_t>(s_batch.rows()) != n_ || static_cast<std::size_t>(x_batch.rows()) != d_ ||
      s_batch.cols() != x_batch.cols()) {
    throw InvalidDimension("ridge batch shape mismatch");
  }
  const auto b = static_cast<int>(s_batch.cols());
  if (b == 0) return;
  const int n = static_cast<int>(n_);
  const int d = static_cast<int>(d_);
  cblas_dsyrk(CblasColMajor, CblasUpper, CblasNoTrans, n, b, 1.0, s_batch.data(), n, 1.0,
              gram_.data(), n);
  cblas_dgemm(CblasColMajor, CblasNoTrans, CblasTrans, d, n, b, 1.0, x_batch.data(), d,
              s_batch.data(), n, 1.0, cross_.data(), d);
  target_sq_ += x_batch.squaredNorm();
  count_ += static_cast<std::size_t>(b);
}

RowMat RidgeAccumulator::solve(double beta) const {
  if (!(beta > 0.0)) throw InvalidArgument("ridge: beta must be positive");
  Mat a = gram_.selfadjointView<Eigen::Upper>();
  a.diagonal().array() += beta;
  Eigen::LLT<Mat> llt(a);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("ridge normal equations are not positive definite; try a larger beta");
  }
  const Mat wt = llt.solve(cross_.transpose());
  if (!wt.allFinite()) throw NumericalError("ridge solve produced non-finite weights; try a larger beta");
  return wt.transpose();
}

double RidgeAccumulator::objective(const RowMat& w, double beta) const {
  const Mat g = gram_.selfadjointView<Eigen::Upper>();
  const Mat wm = w;
  const double fit = (wm * g * wm.transpose()).trace() - 2.0 * (wm * cross_.transpose()).trace() + target_sq_;
  return fit + beta * wm.squaredNorm();
}

RowMat train_readout(const Mat& s_data, const Mat& x_data, double beta) {
  RidgeAccumulator acc(static_cast<std::size_t>(s_data.rows()), static_cast<std::size_t>(x_data.rows()));
  acc.add(s_data, x_data);
  return acc.solve(beta);
}

void fit_readout(ReservoirModel& model, const Mat& inputs, const Mat& targets, std::size_t washout,
                 const std::function<void(std::size_t, const Vec&)>& on_state) {
  if (inputs.cols() != targets.cols()) throw InvalidDimension("fit_readout: inputs/targets length mismatch");
  if (static_cast<std::size_t>(inputs.rows()) != model.input_dim()) throw InvalidDimension("fit_readout: input dimension mismatch");
  const auto total = static_cast<std::size_t>(inputs.cols());
  if (total <= washout) throw InvalidArgument("fit_readout: training data shorter than washout");
  const auto n = static_cast<Eigen::Index>(model.hidden_dim());
  const auto d = targets.rows();
  RidgeAccumulator acc(model.hidden_dim(), static_cast<std::size_t>(d));
  constexpr Eigen::Index kBatch = 1024;
  Mat s_batch(n, kBatch), x_batch(d, kBatch);
  Eigen::Index fill = 0;
  Vec s = model.zero_state();
  Vec x;
  for (std::size_t j = 0; j < total; ++j) {
    x = inputs.col(static_cast<Eigen::Index>(j));
    model.step(s, x, s);
    if (on_state) on_state(j, s);
    if (j < washout) continue;
    s_batch.col(fill) = s;
    x_batch.col(fill) = targets.col(static_cast<Eigen::Index>(j));
    if (++fill == kBatch) {
      acc.add(s_batch, x_batch);
      fill = 0;
    }
  }
  if (fill > 0) acc.add(s_batch.leftCols(fill), x_batch.leftCols(fill));
  if (!s.allFinite()) throw NumericalError("fit_readout: hidden state became non-finite");
  model.set_readout(acc.solve(model.macro().beta));
}

void fit_readout(ReservoirModel& model, const Trajectory& train, std::size_t washout,
                 const std::function<void(std::size_t, const Vec&)>& on_state) {
  if (train.length() < 2) throw InvalidArgument("fit_readout: need at least two states");
  const auto t = static_cast<Eigen::Index>(train.length());
  fit_readout(model, train.states.leftCols(t - 1), train.states.rightCols(t - 1), washout, on_state);
}

}  // namespace rnnda
