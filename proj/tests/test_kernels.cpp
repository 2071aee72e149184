// Scalar reference vs. vectorized kernel equivalence.

#include <cmath>
#include <string>
#include <tuple>
#include <vector>

#include "doctest.h"
#include "rnnda/errors.hpp"
#include "rnnda/kernels.hpp"
#include "rnnda/rng.hpp"

using namespace rnnda;

namespace {

std::vector<double> randv(Rng& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, scale);
  return v;
}

CsrMatrix random_csr(Rng& rng, std::size_t rows, std::size_t cols, double density) {
  std::vector<Triplet> t;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      if (rng.uniform(0.0, 1.0) < density) t.push_back({r, c, rng.uniform(-1.0, 1.0)});
  return csr_from_triplets(rows, cols, t);
}

}  // namespace

TEST_CASE("scalar kernels compute the textbook definitions") {
  const auto& k = kernels::scalar_table();
  std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  CHECK(k.dot(a.data(), b.data(), 3) == doctest::Approx(32.0));
  k.axpy(2.0, a.data(), b.data(), 3);
  CHECK(b == std::vector<double>{6, 9, 12});
  std::vector<double> z{0.0, 0.5, -3.0}, s{1.0, 1.0, 1.0}, out(3);
  k.leaky_tanh(0.25, z.data(), s.data(), out.data(), 3);
  CHECK(out[0] == doctest::Approx(0.75));
  CHECK(out[1] == doctest::Approx(0.25 * std::tanh(0.5) + 0.75));
  k.tanh_slope(z.data(), out.data(), 3);
  CHECK(out[0] == doctest::Approx(1.0));
}

TEST_CASE("avx2 kernels match the scalar reference") {
  const kernels::KernelTable* vec = kernels::avx2_table();
  if (vec == nullptr) {
    MESSAGE("AVX2 unavailable; equivalence test skipped");
    return;
  }
  const auto& ref = kernels::scalar_table();
  Rng rng(42);
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 31u, 1600u, 2001u}) {
    auto a = randv(rng, n, 1.0), b = randv(rng, n, 1.0);
    const double d_ref = ref.dot(a.data(), b.data(), n);
    const double d_vec = vec->dot(a.data(), b.data(), n);
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) scale += std::abs(a[i] * b[i]);
    CHECK(std::abs(d_ref - d_vec) <= 1e-14 * std::max(1.0, scale));

    auto y1 = b, y2 = b;
    ref.axpy(0.37, a.data(), y1.data(), n);
    vec->axpy(0.37, a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y1[i] - y2[i]) <= 1e-15 * (1.0 + std::abs(y1[i])));
  }

  SUBCASE("tanh family over the full argument range") {
    std::vector<double> z;
    for (double x = -30.0; x <= 30.0; x += 0.0137) z.push_back(x);
    for (double x : {0.0, -0.0, 1e-300, -1e-12, 0.625, -0.625, 0.6249999999, 22.0, 50.0, -700.0, 1e5})
      z.push_back(x);
    auto s = randv(rng, z.size(), 1.0);
    std::vector<double> r(z.size()), v(z.size());
    ref.tanh(z.data(), r.data(), z.size());
    vec->tanh(z.data(), v.data(), z.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double err = std::abs(r[i] - v[i]) / std::max(std::abs(r[i]), 1e-300);
      worst = std::max(worst, r[i] == 0.0 ? std::abs(v[i]) : err);
    }
    CHECK(worst < 4e-16);

    ref.leaky_tanh(0.7, z.data(), s.data(), r.data(), z.size());
    vec->leaky_tanh(0.7, z.data(), s.data(), v.data(), z.size());
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(r[i] - v[i]) <= 1e-15 * (1.0 + std::abs(r[i])));

    ref.tanh_slope(z.data(), r.data(), z.size());
    vec->tanh_slope(z.data(), v.data(), z.size());
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(r[i] - v[i]) <= 1e-15);
  }

  SUBCASE("csr matvec") {
    for (auto [rows, cols, dens] : {std::tuple{5u, 5u, 1.0}, std::tuple{100u, 80u, 0.05},
                                    std::tuple{400u, 400u, 0.01}, std::tuple{3u, 9u, 0.0}}) {
      auto m = random_csr(rng, rows, cols, dens);
      auto x = randv(rng, cols, 1.0);
      std::vector<double> y1(rows), y2(rows);
      ref.csr_matvec(m, x.data(), y1.data());
      vec->csr_matvec(m, x.data(), y2.data());
      for (std::size_t i = 0; i < rows; ++i) CHECK(std::abs(y1[i] - y2[i]) <= 1e-13 * (1.0 + std::abs(y1[i])));
    }
  }
}

TEST_CASE("backend selection") {
  const auto before = std::string(kernels::active_name());
  kernels::select(kernels::Backend::kScalar);
  CHECK(kernels::active_name() == "scalar");
  if (kernels::avx2_table() != nullptr) {
    kernels::select(kernels::Backend::kAvx2);
    CHECK(kernels::active_name() == "avx2");
  } else {
    CHECK_THROWS(kernels::select(kernels::Backend::kAvx2));
  }
  kernels::select(before == "avx2" ? kernels::Backend::kAvx2 : kernels::Backend::kScalar);
  std::vector<double> a(3), b(2);
  CHECK_THROWS_AS(kernels::dot(a, b), InvalidDimension);
}

TEST_CASE("csr transpose round trip") {
  Rng rng(3);
  auto m = random_csr(rng, 30, 20, 0.2);
  auto t = m.transposed();
  CHECK(t.rows == 20);
  auto tt = t.transposed();
  CHECK(tt.row_ptr == m.row_ptr);
  CHECK(tt.col_idx == m.col_idx);
  CHECK(tt.values == m.values);
}
