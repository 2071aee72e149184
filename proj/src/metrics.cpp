#include <algorithm>
#include "rnnda/metrics.hpp"

#include <cmath>

#include "rnnda/errors.hpp"

namespace rnnda::metrics {
namespace {

void check_sigma(const Vec& sigma, std::span<const std::size_t> subset) {
  auto bad = [&](std::size_t i) { return !(sigma[static_cast<Eigen::Index>(i)] > 0.0); };
  if (subset.empty()) {
    for (Eigen::Index i = 0; i < sigma.size(); ++i) {
      if (bad(static_cast<std::size_t>(i))) throw InvalidArgument("sigma_clim has a zero component");
    }
  } else {
    for (auto i : subset) {
      if (i >= static_cast<std::size_t>(sigma.size())) throw InvalidDimension("subset index out of range");
      if (bad(i)) throw InvalidArgument("sigma_clim has a zero component");
    }
  }
}

template <class A, class B>
double nrmse_unchecked(const A& est, const B& truth, const Vec& sigma,
                       std::span<const std::size_t> subset) {
  double acc = 0.0;
  if (subset.empty()) {
    for (Eigen::Index i = 0; i < sigma.size(); ++i) {
      const double e = (est[i] - truth[i]) / sigma[i];
      acc += e * e;
    }
    return std::sqrt(acc / static_cast<double>(sigma.size()));
  }
  for (auto s : subset) {
    const auto i = static_cast<Eigen::Index>(s);
    const double e = (est[i] - truth[i]) / sigma[i];
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(subset.size()));
}

}  // namespace

Vec climatological_std(const Trajectory& train) {
  if (train.length() < 2) throw InvalidArgument("climatological_std needs T >= 2");
  const Vec mean = train.states.rowwise().mean();
  const Mat centered = train.states.colwise() - mean;
  return (centered.array().square().rowwise().sum() / static_cast<double>(train.length()))
      .sqrt()
      .matrix();
}

double nrmse(const Vec& estimate, const Vec& truth, const Vec& sigma_clim,
             std::span<const std::size_t> subset) {
  if (estimate.size() != truth.size() || truth.size() != sigma_clim.size()) {
    throw InvalidDimension("nrmse: size mismatch");
  }
  check_sigma(sigma_clim, subset);
  return nrmse_unchecked(estimate, truth, sigma_clim, subset);
}

std::vector<double> nrmse_series(const Mat& estimate, const Mat& truth, const Vec& sigma_clim,
                                 std::span<const std::size_t> subset) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols() ||
      truth.rows() != sigma_clim.size()) {
    throw InvalidDimension("nrmse_series: size mismatch");
  }
  check_sigma(sigma_clim, subset);
  std::vector<double> out(static_cast<std::size_t>(truth.cols()));
  for (Eigen::Index t = 0; t < truth.cols(); ++t) {
    out[static_cast<std::size_t>(t)] =
        nrmse_unchecked(estimate.col(t), truth.col(t), sigma_clim, subset);
  }
  return out;
}

double time_mean(std::span<const double> series, std::size_t first, std::size_t last) {
  if (first >= last || last > series.size()) throw InvalidArgument("time_mean: empty window");
  double acc = 0.0;
  for (std::size_t i = first; i < last; ++i) acc += series[i];
  return acc / static_cast<double>(last - first);
}

double vpt(const Mat& forecast, const Mat& truth, const Vec& sigma_clim, double dt,
           double epsilon) {
  if (!(epsilon > 0.0)) throw InvalidArgument("vpt: epsilon must be positive");
  const auto errors = nrmse_series(forecast, truth, sigma_clim);
  std::size_t valid = 0;
  for (std::size_t k = 1; k < errors.size(); ++k) {
    if (!(errors[k] < epsilon)) break;
    valid = k;
  }
  return static_cast<double>(valid) * dt;
}

Mat correlation_matrix(const Mat& ensemble) {
  if (ensemble.cols() < 2) throw InvalidArgument("correlation needs at least two members");
  const Vec mean = ensemble.rowwise().mean();
  const Mat pert = ensemble.colwise() - mean;
  const Mat cov = pert * pert.transpose() / static_cast<double>(ensemble.cols() - 1);
  const Vec sd = cov.diagonal().array().sqrt();
  for (Eigen::Index i = 0; i < sd.size(); ++i) {
    if (!(sd[i] > 0.0)) throw NumericalError("correlation undefined: zero ensemble variance");
  }
  Mat corr = sd.cwiseInverse().asDiagonal() * cov * sd.cwiseInverse().asDiagonal();
  for (Eigen::Index i = 0; i < corr.rows(); ++i) {
    corr(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < corr.cols(); ++j) {
      const double c = std::clamp(corr(i, j), -1.0, 1.0);
      corr(i, j) = c;
      corr(j, i) = c;
    }
  }
  return corr;
}

double matrix_rmse(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidDimension("matrix_rmse: size mismatch");
  return std::sqrt((a - b).array().square().mean());
}

std::vector<double> error_correlation_rmse(std::span<const Mat> ens_a, std::span<const Mat> ens_b) {
  if (ens_a.size() != ens_b.size()) throw InvalidDimension("error_correlation_rmse: time mismatch");
  std::vector<double> out;
  out.reserve(ens_a.size());
  for (std::size_t t = 0; t < ens_a.size(); ++t) {
    out.push_back(matrix_rmse(correlation_matrix(ens_a[t]), correlation_matrix(ens_b[t])));
  }
  return out;
}

std::vector<double> error_correlation_rmse(std::span<const Mat> ens_a, const Mat& reference) {
  std::vector<double> out;
  out.reserve(ens_a.size());
  for (const auto& e : ens_a) out.push_back(matrix_rmse(correlation_matrix(e), reference));
  return out;
}

}  // namespace rnnda::metrics
