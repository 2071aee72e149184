#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <functional>

namespace rnnda {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Matrix-free square linear operator with its transpose.
struct LinearMap {
  std::size_t dim = 0;
  std::function<void(const Vec& in, Vec& out)> apply;
  std::function<void(const Vec& in, Vec& out)> apply_transpose;

  Vec operator()(const Vec& v) const {
    Vec out(static_cast<Eigen::Index>(dim));
    apply(v, out);
    return out;
  }
  Vec transpose(const Vec& v) const {
    Vec out(static_cast<Eigen::Index>(dim));
    apply_transpose(v, out);
    return out;
  }
};

}  // namespace rnnda
