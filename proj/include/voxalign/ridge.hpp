#pragma once

#include "voxalign/datamodel.hpp"

#include <Eigen/SVD>

namespace voxalign {

/// Ridge weights for every voxel plus the strength each column was fit with.
template <typename Scalar>
struct RidgeFit {
  Matrix<Scalar> weights;  // features x voxels
  Vector<Scalar> lambda;   // per voxel
};

/// Thin SVD of a design matrix, reused across every lambda and every voxel:
/// W(lambda) = V diag(s / (s^2 + lambda)) Uᵀ Y.
template <typename Scalar>
class RidgeSolver {
 public:
  template <typename Derived>
  explicit RidgeSolver(const Eigen::MatrixBase<Derived>& x) {
    if (!x.allFinite()) throw Error("ridge: non-finite design values");
    Eigen::BDCSVD<Matrix<Scalar>> svd(x.derived().template cast<Scalar>(), Eigen::ComputeThinU | Eigen::ComputeThinV);
    u_ = svd.matrixU();
    v_ = svd.matrixV();
    s_ = svd.singularValues();
    rows_ = x.rows();
  }

  Index rows() const { return rows_; }
  Index features() const { return v_.rows(); }
  const Matrix<Scalar>& u() const { return u_; }
  const Matrix<Scalar>& v() const { return v_; }
  const Vector<Scalar>& singular_values() const { return s_; }

  /// Uᵀ Y; the only voxel-dependent product needed for any lambda.
  template <typename Derived>
  Matrix<Scalar> project(const Eigen::MatrixBase<Derived>& y) const {
    if (y.rows() != rows_) throw Error("ridge: response rows != design rows");
    if (!y.allFinite()) throw Error("ridge: non-finite response values");
    return u_.transpose() * y;
  }

  Vector<Scalar> shrinkage(Scalar lambda) const {
    return (s_.array() / (s_.array().square() + lambda)).matrix();
  }

  /// Weights for one lambda shared by every column of the projection.
  Matrix<Scalar> weights_from_projection(const Matrix<Scalar>& uty, Scalar lambda) const {
    return v_ * (shrinkage(lambda).asDiagonal() * uty);
  }

  /// Weights with a per-column lambda.
  Matrix<Scalar> weights_from_projection(const Matrix<Scalar>& uty, const Vector<Scalar>& lambdas) const {
    if (lambdas.size() != uty.cols()) throw Error("ridge: one lambda per voxel required");
    Matrix<Scalar> scaled(uty.rows(), uty.cols());
    for (Index j = 0; j < uty.cols(); ++j)
      scaled.col(j) = shrinkage(lambdas(j)).cwiseProduct(uty.col(j));
    return v_ * scaled;
  }

  template <typename Derived>
  Matrix<Scalar> weights(const Eigen::MatrixBase<Derived>& y, Scalar lambda) const {
    return weights_from_projection(project(y), lambda);
  }

 private:
  Matrix<Scalar> u_, v_;
  Vector<Scalar> s_;
  Index rows_ = 0;
};

/// argmin ||Y - XW||^2 + lambda ||W||^2 for a single lambda > 0.
template <typename DerivedX, typename DerivedY>
RidgeFit<typename DerivedX::Scalar> ridge_fit(const Eigen::MatrixBase<DerivedX>& x,
                                              const Eigen::MatrixBase<DerivedY>& y,
                                              typename DerivedX::Scalar lambda) {
  using Scalar = typename DerivedX::Scalar;
  if (!(lambda > 0)) throw Error("ridge: lambda must be positive");
  RidgeSolver<Scalar> solver(x);
  RidgeFit<Scalar> fit;
  fit.weights = solver.weights(y, lambda);
  fit.lambda = Vector<Scalar>::Constant(y.cols(), lambda);
  return fit;
}

}  // namespace voxalign
