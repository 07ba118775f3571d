#pragma once

#include "voxalign/datamodel.hpp"

#include <Eigen/SVD>

namespace voxalign {

/// Principal axes of a centered data matrix.
template <typename Scalar>
struct PcaModel {
  RowVector<Scalar> mean;           // d
  Matrix<Scalar> components;        // k x d, orthonormal rows
  Vector<Scalar> explained_variance;        // per component, population variance
  Vector<Scalar> explained_variance_ratio;  // fraction of total variance

  Index k() const { return components.rows(); }
  Index dims() const { return components.cols(); }
};

/// Top-k right singular directions of the centered matrix. Each component is
/// signed so that its largest-magnitude entry is positive (first index wins ties).
template <typename Derived>
PcaModel<typename Derived::Scalar> fit_pca(const Eigen::MatrixBase<Derived>& x, Index k) {
  using Scalar = typename Derived::Scalar;
  if (k < 1) throw Error("fit_pca: component count must be >= 1");
  if (k >= std::min(x.rows(), x.cols()))
    throw Error("fit_pca: component count " + std::to_string(k) + " must be < min(rows, cols) = " +
                std::to_string(std::min(x.rows(), x.cols())));
  PcaModel<Scalar> model;
  model.mean = x.colwise().mean();
  const Matrix<Scalar> centered = x.rowwise() - model.mean;
  Eigen::BDCSVD<Matrix<Scalar>> svd(centered, Eigen::ComputeThinV);
  const Vector<Scalar> sv = svd.singularValues();
  model.components = svd.matrixV().leftCols(k).transpose();
  for (Index i = 0; i < k; ++i) {
    Index arg = 0;
    for (Index j = 1; j < model.components.cols(); ++j)
      if (std::abs(model.components(i, j)) > std::abs(model.components(i, arg))) arg = j;
    if (model.components(i, arg) < 0) model.components.row(i) *= Scalar(-1);
  }
  const Scalar total = sv.squaredNorm();
  model.explained_variance = sv.head(k).array().square() / Scalar(x.rows());
  if (total > 0)
    model.explained_variance_ratio = sv.head(k).array().square() / total;
  else
    model.explained_variance_ratio = Vector<Scalar>::Zero(k);
  return model;
}

/// (x - mean) * componentsᵀ.
template <typename Scalar, typename Derived>
Matrix<Scalar> apply_pca(const PcaModel<Scalar>& model, const Eigen::MatrixBase<Derived>& x) {
  if (x.cols() != model.dims())
    throw Error("apply_pca: input has " + std::to_string(x.cols()) + " columns, model expects " +
                std::to_string(model.dims()));
  return (x.rowwise() - model.mean) * model.components.transpose();
}

/// Maps reduced coordinates back to the input space.
template <typename Scalar, typename Derived>
Matrix<Scalar> reconstruct_pca(const PcaModel<Scalar>& model, const Eigen::MatrixBase<Derived>& z) {
  return (z * model.components).rowwise() + model.mean;
}

}  // namespace voxalign
