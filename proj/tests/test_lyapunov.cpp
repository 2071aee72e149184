#include <cmath>
#include <numeric>

#include "doctest.h"
#include "rnnda/errors.hpp"
#include "rnnda/l96.hpp"
#include "rnnda/lyapunov.hpp"
#include "test_util.hpp"

using namespace rnnda;
using namespace rnnda::lyap;

namespace {

LinearMap scaled_identity(std::size_t n, double a) {
  return {n, [a](const Vec& v, Vec& o) { o = a * v; }, [a](const Vec& v, Vec& o) { o = a * v; }};
}

Vec attractor_state(std::uint64_t seed) {
  Rng rng(seed);
  return l96::integrate(Vec::Constant(6, 8.0) + rnnda::testing::random_vec(rng, 6), 0.01, 2000).states.rightCols(1);
}

// Renormalized two-trajectory growth rate.
double two_trajectory_exponent(const Vec& x0, std::size_t steps, double dt, double delta) {
  Vec a = x0, b = x0;
  b[0] += delta;
  double log_sum = 0.0;
  for (std::size_t i = 0; i < steps; ++i) {
    a = l96::rk4_step(a, dt);
    b = l96::rk4_step(b, dt);
    const double sep = (b - a).norm();
    log_sum += std::log(sep / delta);
    b = a + (b - a) * (delta / sep);
  }
  return log_sum / (static_cast<double>(steps) * dt);
}

}  // namespace

TEST_CASE("lyapunov_spectrum") {
  SUBCASE("identity propagator gives zeros") {
    ConstantStream s(scaled_identity(5, 1.0));
    for (double e : lyapunov_spectrum(s, 5, 100, 0.01).exponents) CHECK(std::abs(e) < 1e-14);
  }
  SUBCASE("2 I with dt = 1 gives ln 2") {
    ConstantStream s(scaled_identity(4, 2.0));
    for (double e : lyapunov_spectrum(s, 3, 50, 1.0).exponents) CHECK(e == doctest::Approx(std::log(2.0)).epsilon(1e-13));
  }
  SUBCASE("diagonal propagator recovers sorted log rates") {
    const Vec d = (Vec(4) << 0.5, 3.0, 1.0, 0.1).finished();
    ConstantStream s({4, [d](const Vec& v, Vec& o) { o = d.cwiseProduct(v); },
                      [d](const Vec& v, Vec& o) { o = d.cwiseProduct(v); }});
    const auto exact = lyapunov_spectrum(s, 4, 40, 1.0, 1, Mat::Identity(4, 4)).exponents;
    CHECK(exact[0] == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(std::abs(exact[1]) < 1e-12);
    CHECK(exact[2] == doctest::Approx(std::log(0.5)).epsilon(1e-12));
    CHECK(exact[3] == doctest::Approx(std::log(0.1)).epsilon(1e-12));
    // A random basis converges at rate O(1/steps).
    const auto r = lyapunov_spectrum(s, 4, 4000, 1.0).exponents;
    CHECK(r[0] == doctest::Approx(std::log(3.0)).epsilon(1e-3));
    CHECK(r[3] == doctest::Approx(std::log(0.1)).epsilon(1e-3));
  }
  SUBCASE("L96-6D leading exponent matches the two-trajectory estimate") {
    const Vec x0 = attractor_state(3);
    const da::L96Forecaster model(6, 0.01);
    ModelStream s(model, x0);
    const auto r = lyapunov_spectrum(s, 6, 50000, 0.01);
    const double oracle = two_trajectory_exponent(x0, 50000, 0.01, 1e-8);
    MESSAGE("QR " << r.exponents[0] << " two-trajectory " << oracle);
    CHECK(std::abs(r.exponents[0] - oracle) < 0.05 * std::abs(oracle));
    CHECK(std::is_sorted(r.exponents.rbegin(), r.exponents.rend()));
    // Phase-space contraction: the exponents sum to the mean Jacobian trace, -D.
    const double sum = std::accumulate(r.exponents.begin(), r.exponents.end(), 0.0);
    CHECK(sum < 0.0);
    CHECK(sum == doctest::Approx(-6.0).epsilon(0.01));
    CHECK(r.restarts == 0);
  }
  SUBCASE("collapsed basis is re-initialized") {
    ConstantStream s(scaled_identity(3, 0.0));
    const auto r = lyapunov_spectrum(s, 2, 5, 1.0);
    CHECK(r.restarts == 5);
  }
  SUBCASE("bad arguments") {
    ConstantStream s(scaled_identity(3, 1.0));
    CHECK_THROWS_AS(lyapunov_spectrum(s, 4, 5, 1.0), InvalidArgument);
    CHECK_THROWS_AS(lyapunov_spectrum(s, 1, 5, 0.0), InvalidArgument);
  }
}

TEST_CASE("ftle") {
  SUBCASE("identity stream gives zero at every horizon") {
    ConstantStream s(scaled_identity(7, 1.0));
    for (double v : ftle_curve(s, 30, 0.01)) CHECK(std::abs(v) < 1e-12);
  }
  SUBCASE("long horizons approach the asymptotic exponent") {
    // Initial states are block starts on one reference trajectory, shifted
    // back by the warm-up so each FTLE accumulates over exactly one block.
    const std::size_t block = 2500, warm = 200, blocks = 100;  // 25 MTU ~ 23 Lyapunov times
    const da::L96Forecaster model(6, 0.01);
    const Trajectory ref = l96::integrate(attractor_state(5), 0.01, blocks * block + warm);
    ModelStream stream(model, ref.state(warm));
    const double lambda = lyapunov_spectrum(stream, 1, blocks * block, 0.01).exponents[0];
    std::vector<Vec> starts;
    for (std::size_t b = 0; b < blocks; ++b) starts.push_back(ref.state(b * block));
    const auto stats = ftle_average(model, starts, block, 0.01, {.warmup_steps = warm});
    MESSAGE("mean FTLE(25 MTU) " << stats.mean.back() << " asymptotic " << lambda);
    CHECK(std::abs(stats.mean.back() - lambda) < 0.02 * lambda);
  }
  SUBCASE("curve entries are running averages") {
    const Vec d = (Vec(2) << 2.0, 0.5).finished();
    ConstantStream s({2, [d](const Vec& v, Vec& o) { o = d.cwiseProduct(v); },
                      [d](const Vec& v, Vec& o) { o = d.cwiseProduct(v); }});
    const auto c = ftle_curve(s, 60, 1.0, {.initial = Vec::Ones(2)});
    // |(2^h, 0.5^h)| / sqrt(2) after h steps.
    const double h = 60.0;
    CHECK(c.back() == doctest::Approx(std::log(std::sqrt((std::pow(4.0, h) + std::pow(0.25, h)) / 2.0)) / h).epsilon(1e-12));
    CHECK(c.front() == doctest::Approx(std::log(std::sqrt(4.25 / 2.0))).epsilon(1e-12));
    CHECK_THROWS_AS(ftle_curve(s, 5, 1.0, {.initial = Vec::Zero(2)}), InvalidArgument);
  }
}

TEST_CASE("trained reservoir exponents") {
  const auto data = l96::generate_dataset({.dim = 6, .train_steps = 20000, .test_steps = 3000, .seed = 31});
  auto model = ReservoirModel::create({.hidden_dim = 400, .input_dim = 6, .output_dim = 6, .seed = 5},
                                      preset("model1").macro);
  fit_readout(model, data.train, 1000);
  const da::RnnForecaster f(model);
  const Vec s0 = model.synchronize_final(data.test.states.leftCols(2000), model.zero_state());
  ModelStream s(f, s0);
  const auto r = lyapunov_spectrum(s, 3, 10000, 0.01);
  MESSAGE("hidden-400 leading exponents " << r.exponents[0] << ", " << r.exponents[1] << ", " << r.exponents[2]);
  CHECK(std::isfinite(r.exponents[0]));
  CHECK(r.exponents[0] > 0.0);
  CHECK(std::is_sorted(r.exponents.rbegin(), r.exponents.rend()));
}
