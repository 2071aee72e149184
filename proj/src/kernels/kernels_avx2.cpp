// AVX2/FMA variants. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after the runtime CPU check in dispatch.cpp.

#include <immintrin.h>

#include <cmath>

#include "kernels_impl.hpp"

namespace rnnda::kernels::detail {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void csr_matvec_avx2(const CsrMatrix& a, const double* x, double* y) {
  const double* vals = a.values.data();
  const std::int32_t* cols = a.col_idx.data();
  for (std::size_t r = 0; r < a.rows; ++r) {
    auto k = a.row_ptr[r];
    const auto end = a.row_ptr[r + 1];
    __m256d acc = _mm256_setzero_pd();
    for (; k + 4 <= end; k += 4) {
      const __m128i idx = _mm_loadu_si128(reinterpret_cast<const __m128i*>(cols + k));
      const __m256d xv = _mm256_i32gather_pd(x, idx, 8);
      acc = _mm256_fmadd_pd(_mm256_loadu_pd(vals + k), xv, acc);
    }
    double s = hsum(acc);
    for (; k < end; ++k) s += vals[k] * x[cols[k]];
    y[r] = s;
  }
}

// tanh after the Cephes double-precision algorithm: a rational minimax form
// for |z| < 0.625 and 1 - 2 / (exp(2|z|) + 1) above, with a Pade exp.
inline __m256d exp_on_reduced_range(__m256d x) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
  const __m256d c1 = _mm256_set1_pd(6.93145751953125E-1);
  const __m256d c2 = _mm256_set1_pd(1.42860682030941723212E-6);
  __m256d n = _mm256_round_pd(_mm256_fmadd_pd(log2e, x, _mm256_set1_pd(0.5)),
                              _MM_FROUND_TO_NEG_INF | _MM_FROUND_NO_EXC);
  x = _mm256_fnmadd_pd(n, c1, x);
  x = _mm256_fnmadd_pd(n, c2, x);
  const __m256d xx = _mm256_mul_pd(x, x);
  __m256d p = _mm256_set1_pd(1.26177193074810590878E-4);
  p = _mm256_fmadd_pd(p, xx, _mm256_set1_pd(3.02994407707441961300E-2));
  p = _mm256_fmadd_pd(p, xx, _mm256_set1_pd(9.99999999999999999910E-1));
  p = _mm256_mul_pd(p, x);
  __m256d q = _mm256_set1_pd(3.00198505138664455042E-6);
  q = _mm256_fmadd_pd(q, xx, _mm256_set1_pd(2.52448340349684104192E-3));
  q = _mm256_fmadd_pd(q, xx, _mm256_set1_pd(2.27265548208155028766E-1));
  q = _mm256_fmadd_pd(q, xx, _mm256_set1_pd(2.00000000000000000009E0));
  __m256d e = _mm256_div_pd(p, _mm256_sub_pd(q, p));
  e = _mm256_fmadd_pd(_mm256_set1_pd(2.0), e, _mm256_set1_pd(1.0));
  // Scale by 2^n; n is small here so the biased exponent never overflows.
  const __m128i n32 = _mm256_cvtpd_epi32(n);
  __m256i bits = _mm256_cvtepi32_epi64(n32);
  bits = _mm256_slli_epi64(_mm256_add_epi64(bits, _mm256_set1_epi64x(1023)), 52);
  return _mm256_mul_pd(e, _mm256_castsi256_pd(bits));
}

inline __m256d tanh_pd(__m256d z) {
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  const __m256d az = _mm256_andnot_pd(sign_mask, z);
  const __m256d sign = _mm256_and_pd(sign_mask, z);

  // |z| >= 0.625; 2|z| is capped at 44 where tanh is 1 to double precision.
  const __m256d two_az = _mm256_min_pd(_mm256_add_pd(az, az), _mm256_set1_pd(44.0));
  const __m256d e = exp_on_reduced_range(two_az);
  const __m256d one = _mm256_set1_pd(1.0);
  __m256d large = _mm256_sub_pd(one, _mm256_div_pd(_mm256_set1_pd(2.0), _mm256_add_pd(e, one)));
  large = _mm256_or_pd(large, sign);

  // |z| < 0.625
  const __m256d zz = _mm256_mul_pd(z, z);
  __m256d p = _mm256_set1_pd(-9.64399179425052238628E-1);
  p = _mm256_fmadd_pd(p, zz, _mm256_set1_pd(-9.92877231001918586564E1));
  p = _mm256_fmadd_pd(p, zz, _mm256_set1_pd(-1.61468768441708447952E3));
  __m256d q = _mm256_add_pd(zz, _mm256_set1_pd(1.12811678491632931402E2));
  q = _mm256_fmadd_pd(q, zz, _mm256_set1_pd(2.23548839060100448583E3));
  q = _mm256_fmadd_pd(q, zz, _mm256_set1_pd(4.84406305325125486048E3));
  const __m256d small = _mm256_fmadd_pd(_mm256_mul_pd(z, zz), _mm256_div_pd(p, q), z);

  const __m256d use_large = _mm256_cmp_pd(az, _mm256_set1_pd(0.625), _CMP_GE_OQ);
  return _mm256_blendv_pd(small, large, use_large);
}

void tanh_avx2(const double* z, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, tanh_pd(_mm256_loadu_pd(z + i)));
  for (; i < n; ++i) out[i] = std::tanh(z[i]);
}

void leaky_tanh_avx2(double leak, const double* z, const double* s, double* out,
                     std::size_t n) {
  const __m256d vl = _mm256_set1_pd(leak);
  const __m256d vk = _mm256_set1_pd(1.0 - leak);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d t = tanh_pd(_mm256_loadu_pd(z + i));
    _mm256_storeu_pd(out + i, _mm256_fmadd_pd(vl, t, _mm256_mul_pd(vk, _mm256_loadu_pd(s + i))));
  }
  const double keep = 1.0 - leak;
  for (; i < n; ++i) out[i] = leak * std::tanh(z[i]) + keep * s[i];
}

void tanh_slope_avx2(const double* z, double* out, std::size_t n) {
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d t = tanh_pd(_mm256_loadu_pd(z + i));
    _mm256_storeu_pd(out + i, _mm256_fnmadd_pd(t, t, one));
  }
  for (; i < n; ++i) {
    const double t = std::tanh(z[i]);
    out[i] = 1.0 - t * t;
  }
}

}  // namespace

const KernelTable kAvx2Table{
    "avx2",          dot_avx2,  axpy_avx2,       csr_matvec_avx2,
    tanh_avx2,       leaky_tanh_avx2, tanh_slope_avx2,
};

}  // namespace rnnda::kernels::detail
