#include <algorithm>
#include <cmath>

#include "rnnda/errors.hpp"
#include "rnnda/macro_training.hpp"
#include "rnnda/metrics.hpp"
#include "rnnda/parallel.hpp"
#include "rnnda/rng.hpp"

namespace rnnda::macro {

std::vector<std::size_t> draw_start_steps(std::size_t length, const MacroLossSpec& spec) {
  if (spec.forecasts == 0 || spec.horizon == 0) throw InvalidArgument("forecasts and horizon must be positive");
  if (length < spec.sync_steps + spec.horizon + 1)
    throw InvalidArgument("trajectory too short for one forecast");
  const std::size_t first = spec.sync_steps;
  const std::size_t count = length - spec.horizon - first;  // admissible starts
  if (count < spec.forecasts) throw InvalidArgument("fewer admissible start steps than forecasts");
  // Partial Fisher-Yates over the admissible range.
  Rng rng(spec.start_seed, Stream::kMacroStarts);
  std::vector<std::size_t> pool(count);
  for (std::size_t i = 0; i < count; ++i) pool[i] = first + i;
  for (std::size_t i = 0; i < spec.forecasts; ++i) std::swap(pool[i], pool[i + rng.below(count - i)]);
  pool.resize(spec.forecasts);
  std::sort(pool.begin(), pool.end());
  return pool;
}

double weighted_error(const Mat& forecast, const Mat& truth) {
  if (forecast.rows() != truth.rows() || forecast.cols() != truth.cols() || forecast.cols() < 2)
    throw InvalidDimension("weighted_error needs matching D x (N + 1) blocks with N >= 1");
  const double n = static_cast<double>(forecast.cols() - 1);
  double sum = 0.0;
  for (Eigen::Index k = 0; k < forecast.cols(); ++k)
    sum += (forecast.col(k) - truth.col(k)).squaredNorm() * std::exp(-static_cast<double>(k) / n);
  return sum;
}

double normalized_loss(double loss, std::size_t forecasts, std::size_t horizon, const Vec& clim_std) {
  double weights = 0.0;
  for (std::size_t k = 0; k <= horizon; ++k)
    weights += std::exp(-static_cast<double>(k) / static_cast<double>(horizon));
  return loss / (static_cast<double>(forecasts) * weights * clim_std.squaredNorm());
}

LossBreakdown forecast_loss(const da::ForecastModel& model, const Trajectory& data,
                            std::span<const std::size_t> starts, const MacroLossSpec& spec,
                            const Vec& clim_std) {
  const auto n = spec.horizon;
  const double cap = static_cast<double>(n) * (spec.divergence_scale * clim_std).squaredNorm();
  LossBreakdown out;
  out.per_forecast.assign(starts.size(), 0.0);
  std::vector<char> capped(starts.size(), 0);
  for (auto j : starts)
    if (j < spec.sync_steps || j + n >= data.length()) throw InvalidArgument("start step outside the admissible range");

  parallel_for(starts.size(), spec.jobs, [&](std::size_t i) {
    const auto j = static_cast<Eigen::Index>(starts[i]);
    const auto sync = static_cast<Eigen::Index>(spec.sync_steps);
    Vec s = model.spin_up(data.states.middleCols(j - sync, sync + 1));
    Mat fc(data.states.rows(), static_cast<Eigen::Index>(n + 1));
    fc.col(0) = data.states.col(j);
    Vec x = fc.col(0);
    bool finite = true;
    for (std::size_t k = 1; k <= n && finite; ++k) {
      model.step_from(s, x);
      model.to_system(s, x);
      finite = x.allFinite();
      fc.col(static_cast<Eigen::Index>(k)) = x;
    }
    double e = finite ? weighted_error(fc, data.states.middleCols(j, static_cast<Eigen::Index>(n + 1)))
                      : cap;
    if (!std::isfinite(e) || e > cap) {
      e = cap;
      capped[i] = 1;
    }
    if (!finite) capped[i] = 1;
    out.per_forecast[i] = e;
  });
  for (std::size_t i = 0; i < starts.size(); ++i) {
    out.total += out.per_forecast[i];
    out.diverged += static_cast<std::size_t>(capped[i]);
  }
  return out;
}

LossBreakdown macro_loss(const ReservoirModel& base, const MacroParams& macro, const Trajectory& train,
                         const Trajectory& validation, std::span<const std::size_t> starts,
                         const MacroLossSpec& spec) {
  ReservoirModel model = base;
  model.set_macro(macro);
  fit_readout(model, train, spec.washout);
  if (!model.w_out().allFinite()) {
    LossBreakdown out;
    const double cap = static_cast<double>(spec.horizon) *
                       (spec.divergence_scale * metrics::climatological_std(train)).squaredNorm();
    out.per_forecast.assign(starts.size(), cap);
    out.total = cap * static_cast<double>(starts.size());
    out.diverged = starts.size();
    return out;
  }
  const da::RnnForecaster fc(model);
  return forecast_loss(fc, validation, starts, spec, metrics::climatological_std(train));
}

LossBreakdown local_macro_loss(const loc::PatchLayout& layout, const MacroParams& macro,
                               const Trajectory& train, const Trajectory& validation,
                               std::span<const std::size_t> starts, const MacroLossSpec& spec) {
  loc::LocalTrainingSpec ts;
  ts.hidden_dim = spec.hidden_dim;
  ts.density = spec.density;
  ts.seed = spec.reservoir_seed;
  ts.washout = spec.washout;
  ts.jobs = spec.jobs;
  const loc::LocalizedModel model(layout, loc::train_local_models(layout, train, macro, ts));
  return forecast_loss(model, validation, starts, spec, metrics::climatological_std(train));
}

}  // namespace rnnda::macro
