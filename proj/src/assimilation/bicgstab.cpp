#include <cmath>
#include <limits>

#include "rnnda/assimilation.hpp"
#include "rnnda/errors.hpp"
#include "rnnda/rng.hpp"

namespace rnnda::da {

namespace {

struct Breakdown {};

// One BiCGSTAB run from x; returns when converged, out of iterations, or
// throws Breakdown.
void run(const std::function<void(const Vec&, Vec&)>& apply_a, const Vec& b, const Vec& shadow,
         double target, std::size_t max_iter, Vec& x, std::size_t& iterations, Vec& best_x,
         double& best_res) {
  const Eigen::Index n = b.size();
  constexpr double tiny = std::numeric_limits<double>::min() * 1e10;
  Vec ax(n), r(n), p(n), v(n), s(n), t(n);
  apply_a(x, ax);
  r = b - ax;
  const Vec& rhat = shadow;
  double rho = 1.0, alpha = 1.0, omega = 1.0;
  v.setZero();
  p.setZero();
  while (iterations < max_iter) {
    if (r.norm() <= target) return;
    const double rho_new = rhat.dot(r);
    if (std::abs(rho_new) <= 1e-30 * rhat.norm() * r.norm() || std::abs(rho_new) < tiny) throw Breakdown{};
    const double beta = (rho_new / rho) * (alpha / omega);
    p = r + beta * (p - omega * v);
    apply_a(p, v);
    const double rv = rhat.dot(v);
    if (std::abs(rv) < tiny) throw Breakdown{};
    alpha = rho_new / rv;
    s = r - alpha * v;
    ++iterations;
    if (s.norm() <= target) {
      x += alpha * p;
      r = s;
      if (s.norm() < best_res) { best_res = s.norm(); best_x = x; }
      return;
    }
    apply_a(s, t);
    const double tt = t.squaredNorm();
    if (tt < tiny) throw Breakdown{};
    omega = t.dot(s) / tt;
    if (std::abs(omega) < tiny) throw Breakdown{};
    x += alpha * p + omega * s;
    r = s - omega * t;
    rho = rho_new;
    if (r.norm() < best_res) { best_res = r.norm(); best_x = x; }
  }
}

}  // namespace

SolveResult bicgstab(const std::function<void(const Vec&, Vec&)>& apply_a, const Vec& b, double tol,
                     std::size_t max_iter, std::uint64_t seed) {
  if (!(tol > 0.0)) throw InvalidArgument("bicgstab: tolerance must be positive");
  const Eigen::Index n = b.size();
  SolveResult out;
  out.x = Vec::Zero(n);
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    out.converged = true;
    return out;
  }
  const double target = tol * bnorm;
  Vec best_x = out.x;
  double best_res = bnorm;
  Vec shadow = b;
  for (int attempt = 0;; ++attempt) {
    try {
      run(apply_a, b, shadow, target, max_iter, out.x, out.iterations, best_x, best_res);
      break;
    } catch (const Breakdown&) {
      if (attempt == 1) throw NumericalError("bicgstab: repeated breakdown");
      out.restarted = true;
      Vec ax(n);
      apply_a(out.x, ax);
      const Vec r = b - ax;
      Rng rng(derive_seed(seed, Stream::kOptimizer, 0));
      Vec noise(n);
      for (Eigen::Index i = 0; i < n; ++i) noise[i] = rng.normal();
      shadow = r + 1e-3 * r.norm() / std::sqrt(static_cast<double>(n)) * noise;
    }
  }
  Vec ax(n);
  apply_a(out.x, ax);
  out.residual_norm = (b - ax).norm();
  if (out.residual_norm > best_res) {
    apply_a(best_x, ax);
    const double alt = (b - ax).norm();
    if (alt < out.residual_norm) {
      out.x = best_x;
      out.residual_norm = alt;
    }
  }
  out.converged = out.residual_norm <= target;
  return out;
}

}  // namespace rnnda::da
