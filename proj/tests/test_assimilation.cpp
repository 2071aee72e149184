#include <Eigen/LU>
#include <cmath>

#include "doctest.h"
#include "rnnda/assimilation.hpp"
#include "rnnda/errors.hpp"
#include "rnnda/l96.hpp"
#include "rnnda/metrics.hpp"
#include "test_util.hpp"

using namespace rnnda;
using namespace rnnda::da;
using rnnda::testing::random_mat;
using rnnda::testing::random_vec;
using rnnda::testing::rel_err;

namespace {

ReservoirModel small_rnn(std::size_t n, std::size_t d, std::uint64_t seed, double readout_scale = 0.05) {
  auto m = ReservoirModel::create({.hidden_dim = n, .input_dim = d, .output_dim = d, .density = 0.1, .seed = seed},
                                  {.rho = 0.9, .sigma_in = 0.5, .leak = 0.7, .beta = 1e-6});
  Rng rng(seed + 100);
  m.set_readout(random_mat(rng, static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n), readout_scale));
  return m;
}

// Dense closed-loop Jacobian at s, assembled from the model's matrices.
Mat dense_jacobian(const ReservoirModel& m, const Vec& s) {
  const auto n = static_cast<Eigen::Index>(m.hidden_dim());
  Mat wres = Mat::Zero(n, n);
  for (std::size_t r = 0; r < m.w_res().rows; ++r)
    for (auto k = m.w_res().row_ptr[r]; k < m.w_res().row_ptr[r + 1]; ++k)
      wres(static_cast<Eigen::Index>(r), m.w_res().col_idx[k]) += m.w_res().values[k];
  const auto& p = m.macro();
  const Mat w = p.rho * wres + p.sigma_in * m.w_in() * Mat(m.w_out());
  const Vec slope = (1.0 - (w * s).array().tanh().square()).matrix();
  return p.leak * slope.asDiagonal() * w + (1.0 - p.leak) * Mat::Identity(n, n);
}

Mat selection(const std::vector<std::size_t>& idx, std::size_t d) {
  Mat h = Mat::Zero(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < idx.size(); ++i) h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(idx[i])) = 1.0;
  return h;
}

}  // namespace

TEST_CASE("direct_insertion") {
  const Vec xb = (Vec(6) << 1, 2, 3, 4, 5, 6).finished();
  CHECK(direct_insertion(xb, (Vec(6) << 9, 8, 7, 6, 5, 4).finished(), {0, 1, 2, 3, 4, 5}) ==
        (Vec(6) << 9, 8, 7, 6, 5, 4).finished());
  CHECK(direct_insertion(xb, Vec(0), {}) == xb);
  const Vec xa = direct_insertion(xb, (Vec(3) << -1, -2, -4).finished(), {0, 1, 3});
  for (Eigen::Index i = 0; i < 6; ++i) {
    const double expect = i == 0 ? -1 : i == 1 ? -2 : i == 3 ? -4 : xb[i];
    CHECK(xa[i] == expect);
  }
  CHECK_THROWS_AS(direct_insertion(xb, Vec(2), {0}), InvalidDimension);
  CHECK_THROWS_AS(direct_insertion(xb, Vec(1), {6}), InvalidDimension);
}

TEST_CASE("etkf_update") {
  Rng rng(41);
  SUBCASE("zero innovation keeps the mean") {
    const Mat members = random_mat(rng, 30, 10);
    const Mat hmat = random_mat(rng, 4, 30);
    const Mat predicted = hmat * members;
    const Vec y = predicted.rowwise().mean();
    const auto res = etkf_update(members, predicted, y, Vec::Constant(4, 0.25), 1.2);
    CHECK((res.members.rowwise().mean() - members.rowwise().mean()).norm() < 1e-12);
  }
  SUBCASE("scalar Kalman filter oracle at k = 40") {
    const double prior_mean = 2.0, prior_var = 1.0, r = 0.5, y = 3.0;
    const double gain = prior_var / (prior_var + r);
    const double kf_mean = prior_mean + gain * (y - prior_mean), kf_var = (1.0 - gain) * prior_var;
    double mean_acc = 0.0, var_acc = 0.0;
    const int trials = 500;
    for (int t = 0; t < trials; ++t) {
      Mat members(1, 40);
      for (Eigen::Index m = 0; m < 40; ++m) members(0, m) = rng.normal(prior_mean, std::sqrt(prior_var));
      const auto res = etkf_update(members, members, Vec::Constant(1, y), Vec::Constant(1, r), 1.0);
      // Exact against the sample-covariance Kalman update.
      const double xb = members.mean();
      const double pb = (members.array() - xb).square().sum() / 39.0;
      const double xa = res.members.mean();
      const double pa = (res.members.array() - xa).square().sum() / 39.0;
      CHECK(xa == doctest::Approx(xb + pb / (pb + r) * (y - xb)).epsilon(1e-12));
      CHECK(pa == doctest::Approx(pb * r / (pb + r)).epsilon(1e-12));
      mean_acc += xa;
      var_acc += pa;
    }
    CHECK(mean_acc / trials == doctest::Approx(kf_mean).epsilon(0.05));
    CHECK(var_acc / trials == doctest::Approx(kf_var).epsilon(0.05));
  }
  SUBCASE("assimilation alone never inflates the observed spread") {
    for (int trial = 0; trial < 20; ++trial) {
      const Mat members = random_mat(rng, 20, 10);
      const Mat hmat = random_mat(rng, 5, 20);
      const Vec r = (random_vec(rng, 5).array().abs() + 0.1).matrix();
      const Mat predicted = hmat * members;
      const auto res = etkf_update(members, predicted, random_vec(rng, 5), r, 1.0);
      auto weighted_trace = [&](const Mat& ens) {
        const Mat yp = hmat * (ens.colwise() - ens.rowwise().mean());
        return (yp.transpose() * r.cwiseInverse().asDiagonal() * yp).trace();
      };
      CHECK(weighted_trace(res.members) <= weighted_trace(members) + 1e-12);
    }
  }
  SUBCASE("ensemble-space algebra and explicit gain") {
    const Mat members = random_mat(rng, 15, 8);
    const Mat hmat = random_mat(rng, 3, 15);
    const Vec r = Vec::Constant(3, 0.3);
    const double gamma = 1.3;
    const Mat predicted = hmat * members;
    const auto res = etkf_update(members, predicted, random_vec(rng, 3), r, gamma, true);
    const Mat& wa = res.transform.w_a;
    CHECK((wa - wa.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((wa * wa - 7.0 * res.transform.p_tilde).cwiseAbs().maxCoeff() < 1e-10);
    const Mat sb = members.colwise() - members.rowwise().mean();
    const Mat pb = gamma * sb * sb.transpose() / 7.0;
    const Mat k_explicit = pb * hmat.transpose() * (hmat * pb * hmat.transpose() + Mat(r.asDiagonal())).inverse();
    REQUIRE(res.gain.has_value());
    CHECK((*res.gain - k_explicit).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("shifting every member along an unobserved direction leaves the gain unchanged") {
    const Mat members = random_mat(rng, 10, 6);
    Mat hmat = random_mat(rng, 2, 10);
    hmat.col(9).setZero();
    const Vec y = random_vec(rng, 2), r = Vec::Constant(2, 0.5);
    const auto a = etkf_update(members, hmat * members, y, r, 1.1, true);
    Mat shifted = members;
    shifted.row(9).array() += 3.7;
    const auto b = etkf_update(shifted, hmat * shifted, y, r, 1.1, true);
    CHECK((*a.gain - *b.gain).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((b.members.row(9).array() - a.members.row(9).array() - 3.7).abs().maxCoeff() < 1e-12);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(etkf_update(Mat::Zero(3, 1), Mat::Zero(1, 1), Vec::Zero(1), Vec::Ones(1), 1.0), InvalidArgument);
    CHECK_THROWS_AS(etkf_update(Mat::Zero(3, 4), Mat::Zero(1, 4), Vec::Zero(1), Vec::Ones(1), 0.9), InvalidArgument);
    CHECK_THROWS_AS(etkf_update(Mat::Zero(3, 4), Mat::Zero(1, 4), Vec::Zero(1), Vec::Ones(1), 1e300), NumericalError);
  }
  SUBCASE("callable observation operator") {
    const Mat members = random_mat(rng, 6, 5);
    const auto a = etkf_update_with(members, [](const Vec& s) { return Vec(s.head(2)); }, Vec::Ones(2), Vec::Ones(2), 1.0);
    const auto b = etkf_update(members, Mat(members.topRows(2)), Vec::Ones(2), Vec::Ones(2), 1.0);
    CHECK(a.members == b.members);
  }
}

TEST_CASE("bicgstab") {
  Rng rng(43);
  auto dense_op = [](const Mat& a) { return [a](const Vec& v, Vec& o) { o = a * v; }; };
  SUBCASE("identity converges in one iteration") {
    const Vec b = random_vec(rng, 12);
    const auto r = bicgstab(dense_op(Mat::Identity(12, 12)), b, 1e-12, 10);
    CHECK(r.iterations == 1);
    CHECK((r.x - b).norm() < 1e-14);
    CHECK(r.converged);
  }
  SUBCASE("well-conditioned 20 x 20 system matches a direct solve") {
    for (int trial = 0; trial < 10; ++trial) {
      const Mat a = Mat::Identity(20, 20) * 5.0 + random_mat(rng, 20, 20, 0.3);
      const Vec b = random_vec(rng, 20);
      const auto r = bicgstab(dense_op(a), b, 1e-13, 200);
      CHECK(r.converged);
      CHECK((r.x - a.partialPivLu().solve(b)).cwiseAbs().maxCoeff() < 1e-8);
      CHECK(r.residual_norm == doctest::Approx((b - a * r.x).norm()));
    }
  }
  SUBCASE("zero right-hand side") {
    const auto r = bicgstab(dense_op(random_mat(rng, 5, 5)), Vec::Zero(5), 1e-8, 10);
    CHECK(r.x == Vec::Zero(5));
    CHECK(r.iterations == 0);
  }
  SUBCASE("iteration cap is flagged") {
    const Mat a = (Vec::LinSpaced(50, 1.0, 1e4)).asDiagonal();
    const auto r = bicgstab(dense_op(a), Vec::Ones(50), 1e-12, 3);
    CHECK_FALSE(r.converged);
    CHECK(r.iterations == 3);
  }
  SUBCASE("zero operator breaks down and fails") {
    CHECK_THROWS_AS(bicgstab([](const Vec& v, Vec& o) { o = Vec::Zero(v.size()); }, Vec::Ones(4), 1e-8, 50), NumericalError);
  }
}

TEST_CASE("tangent chains") {
  Rng rng(47);
  SUBCASE("reservoir adjoint chain up to 20 steps") {
    const auto m = small_rnn(80, 6, 3, 0.2);
    const RnnForecaster f(m);
    const TangentChain chain(f, random_vec(rng, 80, 0.3), 20);
    for (std::size_t t : {0u, 1u, 5u, 13u, 20u}) {
      const Vec v = random_vec(rng, 80), w = random_vec(rng, 80);
      const double lhs = chain.forward(v, t).dot(w), rhs = v.dot(chain.adjoint(w, t));
      CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
    }
  }
  SUBCASE("L96 chain follows the nonlinear model") {
    const L96Forecaster f(6, 0.01);
    const Vec x0 = l96::integrate(Vec::Constant(6, 8.0) + random_vec(rng, 6), 0.01, 1000).states.rightCols(1);
    const TangentChain chain(f, x0, 20);
    Vec x = x0;
    f.advance(x, 20);
    CHECK((chain.state(20) - x).norm() < 1e-13);
    const Vec v = random_vec(rng, 6, 1e-6);
    Vec xp = x0 + v;
    f.advance(xp, 20);
    CHECK(rel_err(chain.forward(v, 20), xp - x) < 1e-4);
    const Vec w = random_vec(rng, 6);
    CHECK(std::abs(chain.forward(v, 20).dot(w) - v.dot(chain.adjoint(w, 20))) < 1e-10 * w.norm() * v.norm() * 100);
  }
}

TEST_CASE("fourdvar_analysis") {
  Rng rng(53);
  SUBCASE("empty window returns the background") {
    const auto m = small_rnn(40, 4, 5);
    const RnnForecaster f(m);
    const Vec sb = random_vec(rng, 40, 0.2);
    ObsWindow w;
    w.obs_indices = {0, 1};
    w.r_diag = Vec::Constant(2, 0.01);
    const auto res = fourdvar_analysis(f, sb, sb, w, {.sigma_b = 0.1});
    CHECK(res.s_a0 == sb);
  }
  SUBCASE("scalar optimal interpolation") {
    CsrMatrix one = csr_from_triplets(1, 1, {{0, 0, 1.0}});
    const ReservoirModel m(one, Mat::Constant(1, 1, 0.5), RowMat::Constant(1, 1, 1.0),
                           {.rho = 0.3, .sigma_in = 0.2, .leak = 0.5, .beta = 1e-6});
    const RnnForecaster f(m);
    for (double sb : {0.1, 0.5, 2.0}) {
      for (double so : {0.1, 0.3}) {
        const Vec s0 = Vec::Constant(1, 0.2);
        ObsWindow w{{0}, {Vec::Constant(1, 0.9)}, {0}, Vec::Constant(1, so * so)};
        const auto res = fourdvar_analysis(f, s0, s0, w, {.sigma_b = sb, .outer_loops = 1, .inner_tol = 1e-14});
        const double weight = sb * sb / (sb * sb + so * so);
        CHECK(res.s_a0[0] - 0.2 == doctest::Approx(weight * 0.7).epsilon(1e-8));
      }
    }
  }
  SUBCASE("gradient of the quadratic cost vanishes at the returned increment") {
    const auto m = small_rnn(30, 4, 7, 0.3);
    const RnnForecaster f(m);
    const Vec s_b = random_vec(rng, 30, 0.3);
    const Vec s_f = s_b + random_vec(rng, 30, 0.02);
    const std::vector<std::size_t> idx{0, 2};
    ObsWindow w;
    w.obs_indices = idx;
    w.r_diag = Vec::Constant(2, 0.04);
    for (std::size_t t : {0u, 3u, 6u, 9u}) {
      w.steps.push_back(t);
      w.values.push_back(random_vec(rng, 2, 0.5));
    }
    const double sigma_b = 0.2;
    const VarConfig cfg{.sigma_b = sigma_b, .outer_loops = 1, .inner_tol = 1e-9};
    const auto res = fourdvar_analysis(f, s_f, s_b, w, cfg);
    // Independent evaluation with dense Jacobians.
    const Mat hg = selection(idx, 4) * Mat(m.w_out());
    std::vector<Mat> m_t;  // M_[t,0]
    std::vector<Vec> traj{s_f};
    Mat acc = Mat::Identity(30, 30);
    for (std::size_t t = 0; t <= 9; ++t) {
      m_t.push_back(acc);
      acc = dense_jacobian(m, traj.back()) * acc;
      Vec next;
      m.closed_loop_step(traj.back(), next);
      traj.push_back(next);
    }
    auto grad = [&](const Vec& ds) {
      Vec g = (ds - (s_b - s_f)) / (sigma_b * sigma_b);
      for (std::size_t i = 0; i < w.steps.size(); ++i) {
        const std::size_t t = w.steps[i];
        const Vec d = w.values[i] - hg * traj[t];
        g -= (hg * m_t[t]).transpose() * (w.r_diag.cwiseInverse().cwiseProduct(d - hg * m_t[t] * ds));
      }
      return g;
    };
    const Vec ds = res.s_a0 - s_f;
    const double ratio = grad(ds).norm() / grad(Vec::Zero(30)).norm();
    CHECK(ratio < cfg.inner_tol);
    CHECK(res.loops[0].gradient_ratio == doctest::Approx(ratio).epsilon(1e-3).scale(1e-12));
  }
  SUBCASE("outer loops do not increase the cost and perfect observations recover the truth") {
    const L96Forecaster f(6, 0.01);
    const Trajectory truth = l96::integrate(Vec::Constant(6, 8.0) + random_vec(rng, 6), 0.01, 1020);
    const Vec x0 = truth.state(1000);
    ObsWindow w;
    for (std::size_t i = 0; i < 6; ++i) w.obs_indices.push_back(i);
    w.r_diag = Vec::Constant(6, 0.01);
    for (std::size_t t = 0; t < 20; t += 2) {
      w.steps.push_back(t);
      w.values.push_back(truth.state(1000 + t));
    }
    const Vec xb = x0 + random_vec(rng, 6, 0.5);
    const auto res = fourdvar_analysis(f, xb, xb, w, {.sigma_b = 10.0, .outer_loops = 4, .inner_tol = 1e-10});
    for (std::size_t i = 1; i < res.loops.size(); ++i)
      CHECK(res.loops[i].cost_before <= res.loops[i - 1].cost_before + 1e-9);
    CHECK(res.final_cost <= res.loops.back().cost_before + 1e-9);
    CHECK((res.s_a0 - x0).norm() < 1e-3);
  }
}

namespace {

// x' = 2x: blows up, used to exercise divergence detection.
class Doubling final : public ForecastModel {
 public:
  std::size_t state_dim() const override { return 4; }
  std::size_t system_dim() const override { return 4; }
  void to_system(const Vec& s, Vec& x) const override { x = s; }
  void step_from(Vec& s, const Vec& x) const override { s = 1.05 * x; }
  Vec spin_up(const Mat& h) const override { return h.col(h.cols() - 1); }
  std::string name() const override { return "doubling"; }
};

}  // namespace

TEST_CASE("cycle_da") {
  const Trajectory nature = l96::integrate(Vec::Constant(6, 8.0) + Vec::LinSpaced(6, 0.1, 0.6), 0.01, 4000);
  const Trajectory spin = nature.slice(1000, 1000);
  const Trajectory truth = nature.slice(2000, 2001);
  const Vec clim = metrics::climatological_std(nature.slice(1000, 3000));
  const L96Forecaster model(6, 0.01);
  std::vector<std::size_t> all{0, 1, 2, 3, 4, 5};

  SUBCASE("direct insertion of perfect full observations reproduces the truth") {
    const auto obs = l96::sample_observations(truth, all, 0.01, 0.0, 0.5, 3);
    CycleConfig cfg{.scheme = Scheme::kDirectInsertion, .tau_da = 0.01, .duration = 20.0, .summary_start = 0.0};
    const auto res = cycle_da(model, spin, truth, obs, clim, cfg);
    CHECK_FALSE(res.diverged);
    CHECK(res.records.size() == 2000);
    CHECK(res.summary.rmse_all < 1e-12);
  }
  SUBCASE("perfect-model ETKF stays below the observation error") {
    const auto obs = l96::sample_observations(truth, all, 0.2, 0.5, 0.5, 3);
    CycleConfig cfg{.scheme = Scheme::kEtkf, .ensemble_size = 10, .inflation = 1.05, .tau_da = 0.2,
                    .duration = 20.0, .summary_start = 10.0};
    const auto res = cycle_da(model, spin, truth, obs, clim, cfg);
    CHECK_FALSE(res.diverged);
    CHECK(res.records.size() == 100);
    MESSAGE("ETKF RMSE " << res.summary.rmse_all);
    CHECK(res.summary.rmse_all < 0.5);
    CHECK(res.records.back().spread > 0.0);
    // Reproducible and independent of the thread count.
    cfg.jobs = 3;
    const auto again = cycle_da(model, spin, truth, obs, clim, cfg);
    CHECK(again.analysis == res.analysis);
  }
  SUBCASE("perfect-model 4D-Var") {
    const auto obs = l96::sample_observations(truth, {0, 1, 3}, 0.02, 0.1, 0.1, 5);
    CycleConfig cfg{.scheme = Scheme::kFourDVar, .tau_da = 0.2, .duration = 10.0, .summary_start = 5.0};
    cfg.var.sigma_b = 0.1;
    const auto res = cycle_da(model, spin, truth, obs, clim, cfg);
    CHECK_FALSE(res.diverged);
    MESSAGE("4D-Var NRMSE " << res.summary.nrmse_all << " grad " << res.max_gradient_ratio);
    CHECK(res.summary.nrmse_all < 0.3);
    CHECK(res.all_inner_converged);
  }
  SUBCASE("free run diverges from the truth without data") {
    const auto obs = l96::sample_observations(truth, all, 0.2, 0.5, 0.5, 3);
    CycleConfig cfg{.scheme = Scheme::kFree, .duration = 20.0, .summary_start = 10.0};
    const auto res = cycle_da(model, spin, truth, obs, clim, cfg);
    CHECK(res.summary.nrmse_all > 0.8);
  }
  SUBCASE("divergence flag") {
    const Trajectory t4 = l96::integrate(Vec::Constant(4, 8.0) + Vec::LinSpaced(4, 0.1, 0.4), 0.01, 3000);
    const auto obs = l96::sample_observations(t4.slice(1000, 2001), {0}, 0.2, 0.0, 0.5, 3);
    CycleConfig cfg{.scheme = Scheme::kFree, .duration = 20.0, .spinup_steps = 10, .divergence_cycles = 5};
    const auto res = cycle_da(Doubling{}, t4.slice(0, 1000), t4.slice(1000, 2001), obs, Vec::Ones(4), cfg);
    CHECK(res.diverged);
    CHECK(res.records.size() < 100);
  }
  SUBCASE("misaligned cycle length") {
    const auto obs = l96::sample_observations(truth, all, 0.2, 0.5, 0.5, 3);
    CycleConfig cfg{.scheme = Scheme::kEtkf, .tau_da = 0.015};
    CHECK_THROWS_AS(cycle_da(model, spin, truth, obs, clim, cfg), AlignmentError);
  }
}
