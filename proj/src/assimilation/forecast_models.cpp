#include <memory>

#include "rnnda/assimilation.hpp"
#include "rnnda/errors.hpp"
#include "rnnda/l96.hpp"

namespace rnnda::da {

void ForecastModel::to_system_transpose(const Vec&, Vec&) const {
  throw InvalidArgument(name() + ": system map has no transpose");
}

void ForecastModel::step(Vec& state) const {
  Vec x;
  to_system(state, x);
  step_from(state, x);
}

StepLinearization ForecastModel::linearize(const Vec&) const {
  throw InvalidArgument(name() + ": no tangent linear model");
}

std::vector<AnalysisDomain> ForecastModel::analysis_domains() const {
  return {AnalysisDomain{0, static_cast<Eigen::Index>(state_dim()), {}}};
}

Vec ForecastModel::system(const Vec& state) const {
  Vec x;
  to_system(state, x);
  return x;
}

void ForecastModel::advance(Vec& state, std::size_t n_steps) const {
  for (std::size_t i = 0; i < n_steps; ++i) {
    step(state);
    if (!state.allFinite()) throw DivergenceError(name() + ": non-finite forecast state", i + 1);
  }
}

L96Forecaster::L96Forecaster(std::size_t dim, double dt, double forcing)
    : dim_(dim), dt_(dt), forcing_(forcing) {
  if (dim < 4) throw InvalidDimension("L96 needs at least 4 nodes");
  if (!(dt > 0.0)) throw InvalidArgument("L96: dt must be positive");
}

void L96Forecaster::step_from(Vec& state, const Vec& x_in) const {
  state = l96::rk4_step(x_in, dt_, forcing_);
}

StepLinearization L96Forecaster::linearize(const Vec& state) const {
  auto p = std::make_shared<const l96::Propagator>(state, dt_, forcing_);
  StepLinearization out;
  out.next = p->next_state();
  out.tangent.dim = dim_;
  out.tangent.apply = [p](const Vec& v, Vec& o) { p->apply(v, o); };
  out.tangent.apply_transpose = [p](const Vec& w, Vec& o) { p->apply_transpose(w, o); };
  return out;
}

Vec L96Forecaster::spin_up(const Mat& history) const {
  if (history.cols() < 1 || static_cast<std::size_t>(history.rows()) != dim_)
    throw InvalidDimension("L96 spin-up history has the wrong shape");
  return history.col(history.cols() - 1);
}

RnnForecaster::RnnForecaster(const ReservoirModel& model) : model_(&model) {
  if (!model.trained()) throw NotTrained("RNN forecaster needs a trained readout");
  if (model.input_dim() != model.output_dim())
    throw InvalidDimension("RNN forecaster needs matching input and output dimensions");
}

StepLinearization RnnForecaster::linearize(const Vec& state) const {
  auto p = std::make_shared<const RnnPropagator>(*model_, state);
  StepLinearization out;
  out.next = p->next_state();
  out.tangent.dim = model_->hidden_dim();
  out.tangent.apply = [p](const Vec& v, Vec& o) { p->apply(v, o); };
  out.tangent.apply_transpose = [p](const Vec& w, Vec& o) { p->apply_transpose(w, o); };
  return out;
}

Vec RnnForecaster::spin_up(const Mat& history) const {
  if (history.cols() < 2) throw InvalidArgument("RNN spin-up needs at least two columns");
  return model_->synchronize_final(history.leftCols(history.cols() - 1), model_->zero_state());
}

TangentChain::TangentChain(const ForecastModel& model, const Vec& s0, std::size_t n_steps) {
  states_.reserve(n_steps + 1);
  steps_.reserve(n_steps);
  states_.push_back(s0);
  for (std::size_t t = 0; t < n_steps; ++t) {
    StepLinearization lin = model.linearize(states_.back());
    if (!lin.next.allFinite()) throw DivergenceError("tangent chain: non-finite trajectory", t + 1);
    steps_.push_back(std::move(lin.tangent));
    states_.push_back(std::move(lin.next));
  }
}

Vec TangentChain::forward(const Vec& v, std::size_t t) const {
  if (t > steps_.size()) throw InvalidArgument("tangent chain: step beyond trajectory");
  Vec a = v, b(v.size());
  for (std::size_t i = 0; i < t; ++i) {
    steps_[i].apply(a, b);
    a.swap(b);
  }
  return a;
}

Vec TangentChain::adjoint(const Vec& w, std::size_t t) const {
  if (t > steps_.size()) throw InvalidArgument("tangent chain: step beyond trajectory");
  Vec a = w, b(w.size());
  for (std::size_t i = t; i-- > 0;) {
    steps_[i].apply_transpose(a, b);
    a.swap(b);
  }
  return a;
}

}  // namespace rnnda::da
