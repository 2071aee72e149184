#include <cmath>
#include <vector>

#include "doctest.h"
#include "rnnda/errors.hpp"
#include "rnnda/l96.hpp"
#include "rnnda/metrics.hpp"
#include "test_util.hpp"

using namespace rnnda;
using rnnda::testing::random_mat;

TEST_CASE("climatological_std") {
  SUBCASE("constant trajectory gives zeros, which nrmse rejects") {
    Trajectory t{Mat::Constant(3, 10, 2.5), 0.01, 0.0};
    const Vec sd = metrics::climatological_std(t);
    CHECK(sd == Vec::Zero(3));
    CHECK_THROWS_AS(metrics::nrmse(Vec::Zero(3), Vec::Zero(3), sd), InvalidArgument);
  }
  SUBCASE("two-point series uses the population convention") {
    Trajectory t{Mat(2, 2), 0.01, 0.0};
    t.states << 3.0, -3.0, -0.5, 0.5;
    const Vec sd = metrics::climatological_std(t);
    CHECK(sd[0] == doctest::Approx(3.0));
    CHECK(sd[1] == doctest::Approx(0.5));
  }
  SUBCASE("matches a streaming Welford oracle on a 100k-step run") {
    auto ds = l96::generate_dataset({.dim = 6, .train_steps = 100000, .test_steps = 1, .seed = 12});
    const Vec sd = metrics::climatological_std(ds.train);
    for (Eigen::Index i = 0; i < 6; ++i) {
      double mean = 0.0, m2 = 0.0;
      for (std::size_t k = 0; k < ds.train.length(); ++k) {
        const double x = ds.train.states(i, static_cast<Eigen::Index>(k));
        const double delta = x - mean;
        mean += delta / static_cast<double>(k + 1);
        m2 += delta * (x - mean);
      }
      const double oracle = std::sqrt(m2 / static_cast<double>(ds.train.length()));
      CHECK(std::abs(sd[i] - oracle) < 1e-10);
    }
  }
  CHECK_THROWS(metrics::climatological_std(Trajectory{Mat::Zero(2, 1), 0.01, 0.0}));
}

TEST_CASE("nrmse") {
  Rng rng(2);
  const Vec truth = rnnda::testing::random_vec(rng, 6, 3.0);
  const Vec sigma = (Vec(6) << 1.0, 2.0, 0.5, 3.0, 1.5, 0.25).finished();
  CHECK(metrics::nrmse(truth, truth, sigma) == 0.0);
  CHECK(metrics::nrmse(truth + sigma, truth, sigma) == doctest::Approx(1.0));

  SUBCASE("observed/unobserved split for nodes 1,2,4") {
    const std::vector<std::size_t> observed{0, 1, 3}, unobserved{2, 4, 5};
    Vec est = truth;
    for (auto i : unobserved) est[static_cast<Eigen::Index>(i)] += 2.0 * sigma[static_cast<Eigen::Index>(i)];
    CHECK(metrics::nrmse(est, truth, sigma, observed) == 0.0);
    CHECK(metrics::nrmse(est, truth, sigma, unobserved) == doctest::Approx(2.0));
    CHECK(metrics::nrmse(est, truth, sigma) == doctest::Approx(std::sqrt(2.0)));
  }
  SUBCASE("invariant under joint componentwise affine rescaling") {
    for (int trial = 0; trial < 20; ++trial) {
      const Vec est = truth + rnnda::testing::random_vec(rng, 6);
      const Vec a = rnnda::testing::random_vec(rng, 6, 2.0);
      const Vec b = rnnda::testing::random_vec(rng, 6, 5.0);
      const Vec est2 = a.cwiseProduct(est) + b, truth2 = a.cwiseProduct(truth) + b;
      const Vec sigma2 = a.cwiseAbs().cwiseProduct(sigma);
      CHECK(metrics::nrmse(est2, truth2, sigma2) == doctest::Approx(metrics::nrmse(est, truth, sigma)).epsilon(1e-12));
    }
  }
  SUBCASE("series and time mean") {
    Mat tr = random_mat(rng, 6, 5);
    Mat es = tr;
    es.col(2) += sigma;
    auto series = metrics::nrmse_series(es, tr, sigma);
    CHECK(series.size() == 5);
    CHECK(series[2] == doctest::Approx(1.0));
    CHECK(metrics::time_mean(series, 0, 5) == doctest::Approx(0.2));
    CHECK(metrics::time_mean(series, 3, 5) == 0.0);
  }
}

TEST_CASE("valid prediction time") {
  const Vec sigma = Vec::Ones(3);
  const double dt = 0.01;
  const Mat truth = Mat::Zero(3, 101);
  CHECK(metrics::vpt(truth, truth, sigma, dt) == doctest::Approx(100 * dt));

  Mat jump = truth;
  jump.col(1).setConstant(0.3);
  CHECK(metrics::vpt(jump, truth, sigma, dt) == 0.0);

  // Linear ramp of the normalized error, below 0.2 through step 37 and above
  // from step 38 on: e_k = 0.2 * k / 37.5.
  Mat ramp = truth;
  for (int k = 0; k <= 100; ++k) ramp.col(k).setConstant(0.2 * k / 37.5);
  CHECK(metrics::vpt(ramp, truth, sigma, dt) == doctest::Approx(37 * dt));
  // Error exactly at the threshold is not valid.
  Mat exact = truth;
  for (int k = 0; k <= 100; ++k) exact.col(k).setConstant(k >= 37 ? 0.2 : 0.0);
  CHECK(metrics::vpt(exact, truth, sigma, dt) == doctest::Approx(36 * dt));

  SUBCASE("monotone in the error series") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
      Mat big = truth, small = truth;
      for (int k = 1; k <= 100; ++k) {
        const double e = std::abs(rng.normal(0.0, 0.2)) + 0.002 * k;
        big.col(k).setConstant(e);
        small.col(k).setConstant(e * rng.uniform(0.0, 1.0));
      }
      CHECK(metrics::vpt(small, truth, sigma, dt) >= metrics::vpt(big, truth, sigma, dt));
    }
  }
}

TEST_CASE("forecast error correlation diagnostics") {
  Rng rng(4);
  std::vector<Mat> ens;
  for (int t = 0; t < 5; ++t) ens.push_back(random_mat(rng, 4, 10));
  const auto same = metrics::error_correlation_rmse(ens, ens);
  for (double v : same) CHECK(v == 0.0);

  SUBCASE("two-member ensembles are perfectly (anti)correlated") {
    Mat e(3, 2);
    e << 1.0, 3.0,   // +1
         5.0, 1.0,   // -2
         0.0, 4.0;   // +2
    const Mat c = metrics::correlation_matrix(e);
    Mat expect(3, 3);
    expect << 1, -1, 1, -1, 1, -1, 1, -1, 1;
    CHECK((c - expect).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(metrics::matrix_rmse(c, Mat::Identity(3, 3)) == doctest::Approx(std::sqrt(6.0 / 9.0)));
  }
  SUBCASE("correlation matrices are symmetric with unit diagonal in [-1, 1]") {
    for (const auto& e : ens) {
      const Mat c = metrics::correlation_matrix(e);
      CHECK((c - c.transpose()).cwiseAbs().maxCoeff() == 0.0);
      CHECK(c.diagonal() == Vec::Ones(4));
      CHECK(c.cwiseAbs().maxCoeff() <= 1.0);
    }
  }
  SUBCASE("versus a fixed reference") {
    const auto r = metrics::error_correlation_rmse(ens, Mat::Identity(4, 4));
    CHECK(r.size() == 5);
    CHECK(r[0] > 0.0);
  }
  SUBCASE("zero variance is an error") {
    Mat flat = random_mat(rng, 3, 4);
    flat.row(1).setConstant(2.0);
    CHECK_THROWS_AS(metrics::correlation_matrix(flat), NumericalError);
    CHECK_THROWS(metrics::correlation_matrix(Mat::Ones(3, 1)));
  }
}
