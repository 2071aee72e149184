#include <cmath>
#include <numbers>
#include <set>

#include "doctest.h"
#include "rnnda/errors.hpp"
#include "rnnda/l96.hpp"
#include "rnnda/macro_training.hpp"
#include "rnnda/metrics.hpp"
#include "rnnda/rng.hpp"
#include "test_util.hpp"

using namespace rnnda;
using namespace rnnda::macro;

namespace {

// Scalar affine map x' = a x + b; the state is the system value.
class AffineToy final : public da::ForecastModel {
 public:
  AffineToy(double a, double b) : a_(a), b_(b) {}
  std::size_t state_dim() const override { return 1; }
  std::size_t system_dim() const override { return 1; }
  void to_system(const Vec& s, Vec& x) const override { x = s; }
  void step_from(Vec& s, const Vec& x) const override { s = (a_ * x.array() + b_).matrix(); }
  Vec spin_up(const Mat& history) const override { return history.col(history.cols() - 1); }
  std::string name() const override { return "affine"; }

 private:
  double a_, b_;
};

double branin(const Vec& v) {
  const double x = v[0], y = v[1], pi = std::numbers::pi;
  const double t = y - 5.1 / (4 * pi * pi) * x * x + 5.0 / pi * x - 6.0;
  return t * t + 10.0 * (1.0 - 1.0 / (8.0 * pi)) * std::cos(x) + 10.0;
}
constexpr double kBraninMin = 0.39788735772973816;

}  // namespace

TEST_CASE("weighted_error") {
  Rng rng(1);
  const Mat x = rnnda::testing::random_mat(rng, 3, 11);
  CHECK(weighted_error(x, x) == 0.0);
  SUBCASE("weight one at the start and exp(-1) at the end") {
    Mat f = Mat::Zero(2, 5), t = Mat::Zero(2, 5);
    f(1, 0) = 1.0;
    CHECK(weighted_error(f, t) == doctest::Approx(1.0).epsilon(1e-15));
    f(1, 0) = 0.0;
    f(0, 4) = 2.0;
    CHECK(weighted_error(f, t) == doctest::Approx(4.0 * std::exp(-1.0)).epsilon(1e-15));
  }
  CHECK_THROWS_AS(weighted_error(Mat::Zero(2, 1), Mat::Zero(2, 1)), InvalidDimension);
  CHECK_THROWS_AS(weighted_error(Mat::Zero(2, 3), Mat::Zero(3, 3)), InvalidDimension);
}

TEST_CASE("draw_start_steps") {
  MacroLossSpec spec{.forecasts = 50, .horizon = 20, .sync_steps = 10, .start_seed = 3};
  const auto s = draw_start_steps(200, spec);
  CHECK(s.size() == 50);
  CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == 50);
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(s.front() >= 10);
  CHECK(s.back() + 20 <= 199);
  CHECK(draw_start_steps(200, spec) == s);
  spec.start_seed = 4;
  CHECK(draw_start_steps(200, spec) != s);
  spec.forecasts = 171;  // admissible starts are 10..179
  CHECK_THROWS_AS(draw_start_steps(200, spec), InvalidArgument);
  spec.forecasts = 170;
  CHECK(draw_start_steps(200, spec).size() == 170);
  CHECK_THROWS_AS(draw_start_steps(25, spec), InvalidArgument);
}

TEST_CASE("forecast_loss on a toy model matches a brute-force sum") {
  Trajectory data;
  data.states.resize(1, 40);
  for (int t = 0; t < 40; ++t) data.states(0, t) = std::sin(0.3 * t) + 0.1 * t;
  const AffineToy toy(0.5, 1.0);
  const MacroLossSpec spec{.forecasts = 2, .horizon = 3, .sync_steps = 2};
  const std::vector<std::size_t> starts{5, 17};
  const Vec clim = Vec::Constant(1, 100.0);

  double oracle = 0.0;
  for (auto j : starts) {
    double f = data.states(0, static_cast<Eigen::Index>(j));
    for (int k = 0; k <= 3; ++k) {
      if (k > 0) f = 0.5 * f + 1.0;
      const double e = f - data.states(0, static_cast<Eigen::Index>(j) + k);
      oracle += e * e * std::exp(-k / 3.0);
    }
  }
  const auto loss = forecast_loss(toy, data, starts, spec, clim);
  CHECK(std::abs(loss.total - oracle) < 1e-12);
  CHECK(loss.per_forecast.size() == 2);
  CHECK(loss.diverged == 0);

  SUBCASE("perfect forecasts cost nothing") {
    Trajectory lin;
    lin.states.resize(1, 40);
    lin.states(0, 0) = 0.0;
    for (int t = 1; t < 40; ++t) lin.states(0, t) = 0.5 * lin.states(0, t - 1) + 1.0;
    CHECK(forecast_loss(toy, lin, starts, spec, clim).total == 0.0);
  }
  SUBCASE("diverging forecasts are capped") {
    const AffineToy blowup(1e200, 0.0);
    const Vec c = Vec::Constant(1, 0.5);
    const auto l = forecast_loss(blowup, data, starts, spec, c);
    CHECK(l.diverged == 2);
    CHECK(l.total == doctest::Approx(2 * 3 * 100 * 0.25));
  }
  SUBCASE("parallel evaluation is identical") {
    MacroLossSpec par = spec;
    par.jobs = 2;
    CHECK(forecast_loss(toy, data, starts, par, clim).total == loss.total);
  }
  CHECK_THROWS_AS(forecast_loss(toy, data, std::vector<std::size_t>{1}, spec, clim), InvalidArgument);
  CHECK_THROWS_AS(forecast_loss(toy, data, std::vector<std::size_t>{37}, spec, clim), InvalidArgument);
}

TEST_CASE("normalized_loss") {
  const Vec clim = (Vec(2) << 1.0, 2.0).finished();
  double w = 0.0;
  for (int k = 0; k <= 4; ++k) w += std::exp(-k / 4.0);
  CHECK(normalized_loss(3 * w * 5.0, 3, 4, clim) == doctest::Approx(1.0));
}

TEST_CASE("macro_loss on L96-6D") {
  const auto data = l96::generate_dataset({.train_steps = 6000, .test_steps = 3000, .seed = 5});
  const MacroLossSpec spec{.forecasts = 10, .horizon = 200, .sync_steps = 300, .washout = 300, .hidden_dim = 200,
                           .density = 0.05, .reservoir_seed = 2, .start_seed = 1};
  const auto base = ReservoirModel::create({.hidden_dim = 200, .density = 0.05, .seed = 2}, {});
  const auto starts = draw_start_steps(data.train.length(), spec);
  const auto good = macro_loss(base, preset("model1").macro, data.train, data.train, starts, spec);
  const MacroParams bad{.rho = 1.5, .sigma_in = 1.0, .leak = 1.0, .beta = 1.0};
  const auto poor = macro_loss(base, bad, data.train, data.train, starts, spec);
  CHECK(good.total < poor.total);
  CHECK(macro_loss(base, preset("model1").macro, data.train, data.train, starts, spec).total == good.total);
  const Vec clim = metrics::climatological_std(data.train);
  MESSAGE("normalized loss: tuned " << normalized_loss(good.total, 10, 200, clim) << ", poor "
                                    << normalized_loss(poor.total, 10, 200, clim));

  SUBCASE("more forecast starts reduce the spread of the loss across start draws") {
    auto spread = [&](std::size_t m) {
      MacroLossSpec s = spec;
      s.forecasts = m;
      std::vector<double> v;
      for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        s.start_seed = seed;
        const auto st = draw_start_steps(data.train.length(), s);
        v.push_back(normalized_loss(macro_loss(base, preset("model1").macro, data.train, data.train, st, s).total,
                                    m, s.horizon, clim));
      }
      double mean = 0.0, var = 0.0;
      for (double x : v) mean += x / 8.0;
      for (double x : v) var += (x - mean) * (x - mean) / 7.0;
      return var;
    };
    const double v1 = spread(1), v30 = spread(30);
    MESSAGE("loss variance across start draws: M=1 " << v1 << ", M=30 " << v30);
    CHECK(v30 < v1);
  }
}

TEST_CASE("Kriging surrogate") {
  auto quad = [](const Vec& x) { return 1.0 + (x[0] - 0.3) * (x[0] - 0.3) + 2.0 * (x[1] - 0.6) * (x[1] - 0.6); };
  const auto pts = latin_hypercube(30, 2, 7);
  Vec y(30);
  for (int i = 0; i < 30; ++i) y[i] = quad(pts[static_cast<std::size_t>(i)]);
  const auto s = fit_surrogate(pts, y);

  SUBCASE("interpolates the samples with near-zero variance") {
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto p = s.predict(pts[i]);
      CHECK(std::abs(p.mean - y[static_cast<Eigen::Index>(i)]) < 1e-4 * std::abs(y[static_cast<Eigen::Index>(i)]));
      CHECK(p.variance < 1e-8 * s.process_variance() + 1e-14);
    }
  }
  SUBCASE("predicts a quadratic at held-out points within 5%") {
    Rng rng(11);
    for (int k = 0; k < 50; ++k) {
      const Vec x = (Vec(2) << rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)).finished();
      CHECK(std::abs(s.predict(x).mean - quad(x)) < 0.05 * quad(x));
    }
  }
  SUBCASE("with_point at the predicted mean collapses the variance there") {
    const Vec x = (Vec(2) << 0.5, 0.5).finished();
    const auto before = s.predict(x);
    const auto s2 = s.with_point(x, before.mean);
    CHECK(s2.theta() == s.theta());
    CHECK(s2.size() == 31);
    CHECK(std::abs(s2.predict(x).mean - before.mean) < 1e-4 * before.mean);
    CHECK(s2.predict(x).variance < 1e-9 * s2.process_variance());
  }
  SUBCASE("nearly coincident points are absorbed by jitter") {
    std::vector<Vec> p2{(Vec(1) << 0.0).finished(), (Vec(1) << 1e-9).finished(), (Vec(1) << 1.0).finished()};
    const auto s2 = Surrogate::assemble(p2, (Vec(3) << 1.0, 1.0, 2.0).finished(), (Vec(1) << 1e-3).finished());
    CHECK(s2.jitter() >= 1e-10);
    CHECK(std::isfinite(s2.predict((Vec(1) << 0.5).finished()).mean));
  }
  CHECK_THROWS_AS(fit_surrogate({pts[0]}, Vec::Ones(1)), InvalidArgument);
  CHECK_THROWS_AS(fit_surrogate({pts[0], pts[0]}, Vec::Ones(2)), InvalidArgument);
  CHECK_THROWS_AS(fit_surrogate({pts[0], pts[1]}, Vec::Ones(3)), InvalidDimension);
}

TEST_CASE("expected_improvement") {
  SUBCASE("closed form against Monte Carlo") {
    Rng rng(21);
    for (auto [mu, sd, best] : {std::tuple{0.0, 1.0, 0.0}, {1.0, 0.5, 0.8}, {-0.3, 2.0, 0.5}}) {
      double acc = 0.0;
      const int n = 100000;
      for (int i = 0; i < n; ++i) acc += std::max(best - rng.normal(mu, sd), 0.0);
      const double mc = acc / n, ei = expected_improvement(mu, sd, best);
      CHECK(std::abs(ei - mc) < 0.01 * ei);
    }
  }
  CHECK(expected_improvement(0.0, 0.0, 1.0) == 0.0);
  const auto pts = latin_hypercube(12, 2, 3);
  Vec y(12);
  for (int i = 0; i < 12; ++i) y[i] = branin((Vec(2) << 15 * pts[i][0] - 5, 15 * pts[i][1]).finished());
  const auto s = fit_surrogate(pts, y);
  CHECK(expected_improvement(s, pts[4], y.minCoeff()) == 0.0);
  Rng rng(2);
  for (int k = 0; k < 200; ++k) CHECK(expected_improvement(s, rnnda::testing::random_vec(rng, 2).cwiseAbs(), y.minCoeff()) >= 0.0);
}

TEST_CASE("latin_hypercube stratifies every axis") {
  const auto pts = latin_hypercube(16, 3, 5);
  for (int d = 0; d < 3; ++d) {
    std::set<int> bins;
    for (const auto& p : pts) bins.insert(static_cast<int>(p[d] * 16));
    CHECK(bins.size() == 16);
  }
}

TEST_CASE("EGO") {
  const Vec lo = (Vec(2) << -5.0, 0.0).finished(), hi = (Vec(2) << 10.0, 15.0).finished();
  SUBCASE("Branin with the standard budget") {
    const EgoOptions opts;
    const auto r = ego_minimize(branin, lo, hi, opts);
    MESSAGE("Branin best " << r.best_value << " at " << r.best_x.transpose());
    CHECK(r.history.size() == 10 + 15 * 4);
    CHECK(r.ok);
    CHECK(r.best_value - kBraninMin < 1e-2);
    for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i].incumbent <= r.history[i - 1].incumbent);
    for (const auto& h : r.history) CHECK(((h.x.array() >= lo.array()) && (h.x.array() <= hi.array())).all());
  }
  SUBCASE("identical seeds give identical traces, also in parallel") {
    EgoOptions opts{.iterations = 3};
    const auto a = ego_minimize(branin, lo, hi, opts);
    opts.jobs = 3;
    const auto b = ego_minimize(branin, lo, hi, opts);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      CHECK(a.history[i].x == b.history[i].x);
      CHECK(a.history[i].value == b.history[i].value);
    }
  }
  SUBCASE("failed evaluations are recorded and avoided") {
    auto f = [](const Vec& v) {
      if (v[0] > 5.0) return std::numeric_limits<double>::quiet_NaN();
      return branin(v);
    };
    const auto r = ego_minimize(f, lo, hi, {.iterations = 4});
    CHECK(r.ok);
    CHECK(std::isfinite(r.best_value));
    bool any_failed = false;
    for (const auto& h : r.history) any_failed |= h.failed;
    CHECK(any_failed);
  }
  SUBCASE("every evaluation failing is reported") {
    const auto r = ego_minimize([](const Vec&) -> double { throw NumericalError("x"); }, lo, hi, {.iterations = 1});
    CHECK_FALSE(r.ok);
    CHECK(r.history.size() == 14);
  }
  SUBCASE("log-transformed surrogate") {
    const auto r = ego_minimize(branin, lo, hi, {.iterations = 8, .log_values = true});
    CHECK(r.best_value < 1.0);
  }
  CHECK_THROWS_AS(ego_minimize(branin, hi, lo, {}), InvalidArgument);
}

TEST_CASE("macro search") {
  const MacroParams p{.rho = 0.4, .sigma_in = 0.05, .leak = 0.7, .beta = 1e-6};
  const auto q = from_search_space(to_search_space(p));
  CHECK(q.rho == p.rho);
  CHECK(std::abs(q.beta - p.beta) < 1e-20);

  const auto data = l96::generate_dataset({.train_steps = 3000, .test_steps = 10, .seed = 6});
  const MacroLossSpec spec{.forecasts = 4, .horizon = 100, .sync_steps = 200, .washout = 200, .hidden_dim = 100,
                           .density = 0.05};
  const auto r = optimize_macro(data.train, data.train, spec, {.initial_points = 5, .iterations = 2, .batch = 2,
                                                              .ei_starts = 10, .log_values = true});
  const MacroBounds box;
  CHECK(box.contains(r.best));
  CHECK(r.trace.history.size() == 9);
  CHECK(r.starts.size() == 4);
  for (const auto& h : r.trace.history) CHECK(box.contains(from_search_space(h.x)));
  CHECK(r.best_loss == doctest::Approx(r.trace.best_value));
}
