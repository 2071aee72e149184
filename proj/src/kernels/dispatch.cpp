#include <atomic>
#include <cstdlib>
#include <string>

#include "kernels_impl.hpp"
#include "rnnda/errors.hpp"

namespace rnnda::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(RNNDA_HAVE_AVX2_KERNELS) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_choice() {
  if (const char* env = std::getenv("RNNDA_KERNELS")) {
    if (std::string(env) == "scalar") return &detail::kScalarTable;
  }
  if (const KernelTable* t = avx2_table()) return t;
  return &detail::kScalarTable;
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> table{initial_choice()};
  return table;
}

void check_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw InvalidDimension(std::string("kernel size mismatch: ") + what);
}

}  // namespace

const KernelTable& scalar_table() { return detail::kScalarTable; }

const KernelTable* avx2_table() {
#if defined(RNNDA_HAVE_AVX2_KERNELS)
  static const bool ok = cpu_has_avx2();
  return ok ? &detail::kAvx2Table : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

void select(Backend backend) {
  if (backend == Backend::kScalar) {
    slot().store(&detail::kScalarTable);
    return;
  }
  const KernelTable* t = avx2_table();
  if (t == nullptr) throw Error("AVX2 kernels are not available on this CPU");
  slot().store(t);
}

std::string_view active_name() { return active().name; }

double dot(std::span<const double> a, std::span<const double> b) {
  check_same(a.size(), b.size(), "dot");
  return active().dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_same(x.size(), y.size(), "axpy");
  active().axpy(alpha, x.data(), y.data(), x.size());
}

void csr_matvec(const CsrMatrix& a, std::span<const double> x, std::span<double> y) {
  check_same(a.cols, x.size(), "csr_matvec x");
  check_same(a.rows, y.size(), "csr_matvec y");
  active().csr_matvec(a, x.data(), y.data());
}

void tanh(std::span<const double> z, std::span<double> out) {
  check_same(z.size(), out.size(), "tanh");
  active().tanh(z.data(), out.data(), z.size());
}

void leaky_tanh(double leak, std::span<const double> z, std::span<const double> s,
                std::span<double> out) {
  check_same(z.size(), s.size(), "leaky_tanh");
  check_same(z.size(), out.size(), "leaky_tanh");
  active().leaky_tanh(leak, z.data(), s.data(), out.data(), z.size());
}

void tanh_slope(std::span<const double> z, std::span<double> out) {
  check_same(z.size(), out.size(), "tanh_slope");
  active().tanh_slope(z.data(), out.data(), z.size());
}

}  // namespace rnnda::kernels
