// Reference kernels. These define the semantics the vectorized variants are
// tested against.

#include <cmath>

#include "kernels_impl.hpp"

namespace rnnda::kernels::detail {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void csr_matvec_scalar(const CsrMatrix& a, const double* x, double* y) {
  for (std::size_t r = 0; r < a.rows; ++r) {
    double acc = 0.0;
    for (auto k = a.row_ptr[r]; k < a.row_ptr[r + 1]; ++k) {
      acc += a.values[k] * x[a.col_idx[k]];
    }
    y[r] = acc;
  }
}

void tanh_scalar(const double* z, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(z[i]);
}

void leaky_tanh_scalar(double leak, const double* z, const double* s,
                       double* out, std::size_t n) {
  const double keep = 1.0 - leak;
  for (std::size_t i = 0; i < n; ++i) out[i] = leak * std::tanh(z[i]) + keep * s[i];
}

void tanh_slope_scalar(const double* z, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double t = std::tanh(z[i]);
    out[i] = 1.0 - t * t;
  }
}

}  // namespace

const KernelTable kScalarTable{
    "scalar",          dot_scalar,        axpy_scalar,
    csr_matvec_scalar, tanh_scalar,       leaky_tanh_scalar,
    tanh_slope_scalar,
};

}  // namespace rnnda::kernels::detail
