#pragma once

#include "voxalign/datamodel.hpp"

#include <cmath>
#include <span>

namespace voxalign {

/// Per-column z-scoring with statistics taken from training rows only.
/// Uses the population standard deviation; constant columns map to zero.
template <typename Scalar>
struct Standardizer {
  RowVector<Scalar> mean;
  RowVector<Scalar> scale;       // population std, 1 for constant columns
  std::vector<bool> constant;

  Index cols() const { return mean.size(); }

  template <typename Derived>
  Matrix<Scalar> apply(const Eigen::MatrixBase<Derived>& x) const {
    if (x.cols() != cols()) throw Error("standardize: column count mismatch");
    Matrix<Scalar> out = (x.rowwise() - mean).array().rowwise() / scale.array();
    for (Index c = 0; c < cols(); ++c)
      if (constant[c]) out.col(c).setZero();
    return out;
  }

  /// Maps standardized values back to original units (constant columns get their mean).
  template <typename Derived>
  Matrix<Scalar> invert(const Eigen::MatrixBase<Derived>& z) const {
    Matrix<Scalar> out = (z.array().rowwise() * scale.array()).matrix().rowwise() + mean;
    return out;
  }
};

/// Columns whose training spread is below this fraction of max(1, |mean|) are constant.
inline constexpr double kConstantTolerance = 1e-12;

/// Gathers the given rows of x.
template <typename Derived>
Matrix<typename Derived::Scalar> take_rows(const Eigen::MatrixBase<Derived>& x, std::span<const Index> rows) {
  Matrix<typename Derived::Scalar> out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = x.row(rows[i]);
  return out;
}

template <typename Derived>
Standardizer<typename Derived::Scalar> standardize_fit(const Eigen::MatrixBase<Derived>& x,
                                                       std::span<const Index> train_rows) {
  using Scalar = typename Derived::Scalar;
  if (train_rows.empty()) throw Error("standardize_fit: no training rows");
  const Matrix<Scalar> t = take_rows(x, train_rows);
  Standardizer<Scalar> s;
  s.mean = t.colwise().mean();
  const RowVector<Scalar> var = (t.rowwise() - s.mean).array().square().colwise().mean();
  s.scale = var.array().sqrt();
  s.constant.assign(static_cast<std::size_t>(t.cols()), false);
  for (Index c = 0; c < t.cols(); ++c) {
    const Scalar floor = Scalar(kConstantTolerance) * std::max(Scalar(1), std::abs(s.mean(c)));
    if (!(s.scale(c) > floor)) {
      s.constant[c] = true;
      s.scale(c) = Scalar(1);
    }
  }
  return s;
}

/// Fit on every row.
template <typename Derived>
Standardizer<typename Derived::Scalar> standardize_fit(const Eigen::MatrixBase<Derived>& x) {
  std::vector<Index> all(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i) all[i] = i;
  return standardize_fit(x, std::span<const Index>(all));
}

template <typename Scalar, typename Derived>
Matrix<Scalar> standardize_apply(const Standardizer<Scalar>& s, const Eigen::MatrixBase<Derived>& x) {
  return s.apply(x);
}

}  // namespace voxalign
