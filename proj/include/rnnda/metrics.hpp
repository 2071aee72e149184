#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rnnda/trajectory.hpp"
#include "rnnda/types.hpp"

namespace rnnda::metrics {

/// Per-variable standard deviation over time, population (1/T) convention.
Vec climatological_std(const Trajectory& train);

/// Normalized RMSE of one state over `subset` (all components when empty).
double nrmse(const Vec& estimate, const Vec& truth, const Vec& sigma_clim,
             std::span<const std::size_t> subset = {});

/// Column-wise normalized RMSE of aligned D x T matrices.
std::vector<double> nrmse_series(const Mat& estimate, const Mat& truth, const Vec& sigma_clim,
                                 std::span<const std::size_t> subset = {});

/// Mean of series[first, last).
double time_mean(std::span<const double> series, std::size_t first, std::size_t last);

/// Valid prediction time. Column k of `forecast`/`truth` is lead time k * dt;
/// column 0 is the initial time and is not scored. Returns the largest lead
/// time such that the normalized RMSE stays strictly below epsilon at every
/// lead up to it.
double vpt(const Mat& forecast, const Mat& truth, const Vec& sigma_clim, double dt,
           double epsilon = 0.2);

/// D x D correlation matrix of ensemble perturbations (columns are members).
Mat correlation_matrix(const Mat& ensemble);

/// Elementwise RMSE between two D x D matrices.
double matrix_rmse(const Mat& a, const Mat& b);

/// Per-time RMSE between the perturbation correlation matrices of two
/// ensembles. ens_a[t] and ens_b[t] are D x k ensembles valid at time t.
std::vector<double> error_correlation_rmse(std::span<const Mat> ens_a, std::span<const Mat> ens_b);
/// Same, against a fixed reference correlation matrix.
std::vector<double> error_correlation_rmse(std::span<const Mat> ens_a, const Mat& reference);

}  // namespace rnnda::metrics
