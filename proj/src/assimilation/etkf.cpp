#include <Eigen/Eigenvalues>
#include <cmath>
#include <sstream>

#include "rnnda/assimilation.hpp"
#include "rnnda/errors.hpp"

namespace rnnda::da {

namespace {
constexpr double kEigenFloor = 1e-12;
}

Vec direct_insertion(const Vec& x_b, const Vec& y, const std::vector<std::size_t>& obs_indices) {
  if (static_cast<std::size_t>(y.size()) != obs_indices.size())
    throw InvalidDimension("direct_insertion: observation count does not match indices");
  Vec x_a = x_b;
  for (std::size_t i = 0; i < obs_indices.size(); ++i) {
    if (obs_indices[i] >= static_cast<std::size_t>(x_b.size()))
      throw InvalidDimension("direct_insertion: observation index out of range");
    x_a[static_cast<Eigen::Index>(obs_indices[i])] = y[static_cast<Eigen::Index>(i)];
  }
  return x_a;
}

EtkfTransform etkf_transform(const Mat& predicted, const Vec& y, const Vec& r_diag, double inflation) {
  const Eigen::Index k = predicted.cols();
  const Eigen::Index p = predicted.rows();
  if (k < 2) throw InvalidArgument("ETKF needs at least two members");
  if (y.size() != p || r_diag.size() != p) throw InvalidDimension("ETKF: observation sizes disagree");
  if (!(inflation >= 1.0)) throw InvalidArgument("ETKF: inflation must be >= 1");
  if (p > 0 && !(r_diag.minCoeff() > 0.0)) throw InvalidArgument("ETKF: R must be positive definite");

  const Vec y_mean = predicted.rowwise().mean();
  const Mat yb = predicted.colwise() - y_mean;
  const Mat c = yb.transpose() * r_diag.cwiseInverse().asDiagonal();  // k x p
  Mat a = c * yb;
  a.diagonal().array() += static_cast<double>(k - 1) / inflation;
  a = 0.5 * (a + a.transpose());

  Eigen::SelfAdjointEigenSolver<Mat> es(a);
  if (es.info() != Eigen::Success) throw NumericalError("ETKF: eigendecomposition failed");
  const Vec lambda = es.eigenvalues();
  if (!(lambda.minCoeff() > kEigenFloor)) {
    std::ostringstream msg;
    msg << "ETKF: analysis precision has eigenvalue " << lambda.minCoeff() << " below floor "
        << kEigenFloor;
    throw NumericalError(msg.str());
  }
  const Mat& q = es.eigenvectors();
  EtkfTransform out;
  out.min_eigenvalue = lambda.minCoeff();
  out.p_tilde = q * lambda.cwiseInverse().asDiagonal() * q.transpose();
  out.w_a = q * (static_cast<double>(k - 1) * lambda.cwiseInverse()).cwiseSqrt().asDiagonal() * q.transpose();
  out.w_a = 0.5 * (out.w_a + out.w_a.transpose());
  out.w_mean = out.p_tilde * (c * (y - y_mean));
  return out;
}

Mat apply_transform(const Mat& members, const EtkfTransform& t) {
  if (members.cols() != t.w_a.rows()) throw InvalidDimension("ETKF: member counts disagree");
  const Vec mean = members.rowwise().mean();
  Mat weights = t.w_a;
  weights.colwise() += t.w_mean;
  Mat out = (members.colwise() - mean) * weights;
  out.colwise() += mean;
  return out;
}

EtkfResult etkf_update(const Mat& members, const Mat& predicted, const Vec& y, const Vec& r_diag,
                       double inflation, bool want_gain) {
  if (members.cols() != predicted.cols()) throw InvalidDimension("ETKF: member counts disagree");
  EtkfResult out;
  out.transform = etkf_transform(predicted, y, r_diag, inflation);
  out.members = apply_transform(members, out.transform);
  if (want_gain) {
    const Mat sb = members.colwise() - members.rowwise().mean();
    const Mat yb = predicted.colwise() - predicted.rowwise().mean();
    out.gain = sb * (out.transform.p_tilde * yb.transpose() * r_diag.cwiseInverse().asDiagonal());
  }
  return out;
}

EtkfResult etkf_update_with(const Mat& members, const std::function<Vec(const Vec&)>& obs_op,
                       const Vec& y, const Vec& r_diag, double inflation, bool want_gain) {
  Mat predicted(y.size(), members.cols());
  for (Eigen::Index m = 0; m < members.cols(); ++m) {
    const Vec hx = obs_op(members.col(m));
    if (hx.size() != y.size()) throw InvalidDimension("ETKF: observation operator output size");
    predicted.col(m) = hx;
  }
  return etkf_update(members, predicted, y, r_diag, inflation, want_gain);
}

}  // namespace rnnda::da
