#pragma once

// Data-parallel inner loops of the reservoir recurrence and its tangent
// linear model. Every kernel has a scalar reference implementation and, on
// x86-64 CPUs that report AVX2+FMA, a vectorized variant. The active table is
// chosen once at first use; RNNDA_KERNELS=scalar forces the reference path.

#include <cstddef>
#include <span>
#include <string_view>

#include "rnnda/sparse.hpp"

namespace rnnda::kernels {

struct KernelTable {
  const char* name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y = A x
  void (*csr_matvec)(const CsrMatrix& a, const double* x, double* y);
  void (*tanh)(const double* z, double* out, std::size_t n);
  // out = leak * tanh(z) + (1 - leak) * s
  void (*leaky_tanh)(double leak, const double* z, const double* s,
                     double* out, std::size_t n);
  // out = 1 - tanh(z)^2
  void (*tanh_slope)(const double* z, double* out, std::size_t n);
};

enum class Backend { kScalar, kAvx2 };

const KernelTable& scalar_table();
/// nullptr when the binary or the CPU lacks AVX2/FMA support.
const KernelTable* avx2_table();

const KernelTable& active();
/// Overrides the runtime choice. Throws if the backend is unavailable.
void select(Backend backend);
std::string_view active_name();

// Span wrappers over the active table.
double dot(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void csr_matvec(const CsrMatrix& a, std::span<const double> x,
                std::span<double> y);
void tanh(std::span<const double> z, std::span<double> out);
void leaky_tanh(double leak, std::span<const double> z,
                std::span<const double> s, std::span<double> out);
void tanh_slope(std::span<const double> z, std::span<double> out);

}  // namespace rnnda::kernels
