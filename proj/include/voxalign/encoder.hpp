#pragma once

#include "voxalign/datamodel.hpp"
#include "voxalign/ridge.hpp"
#include "voxalign/standardize.hpp"

#include <span>
#include <utility>

namespace voxalign {

/// How inner validation folds rank candidate lambdas.
enum class SelectionCriterion {
  r2,       // mean held-out coefficient of determination
  pearson,  // mean held-out Pearson correlation
};

/// 10 values log-spaced over [1e-3, 1e6].
std::vector<double> default_lambda_grid();
std::vector<double> log_grid(double lo, double hi, int count);

struct EncoderConfig {
  std::vector<double> lambda_grid = default_lambda_grid();
  Index trim = 10;
  SelectionCriterion criterion = SelectionCriterion::r2;
};

/// Leave-one-run-out folds; the test run loses `trim` TRs at each end and
/// those TRs are used nowhere.
FoldPlan make_fold_plan(const SeriesGeometry& geometry, Index trim = 10);

struct LambdaSelection {
  Eigen::VectorXd lambda;         // per voxel
  std::vector<bool> degenerate;   // voxel had no usable validation score
  Eigen::MatrixXd scores;         // grid x voxels, mean over inner folds
};

/// Row index sets (into the matrices passed alongside) for one inner split.
struct InnerSplit {
  std::vector<Index> train;
  std::vector<Index> validate;
};

/// Per voxel, the grid value with the best mean inner score; ties go to the
/// smallest lambda, degenerate voxels get the largest.
LambdaSelection select_lambda(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                              std::span<const InnerSplit> splits, std::span<const double> grid,
                              SelectionCriterion criterion = SelectionCriterion::r2);

/// Leave-one-training-run-out inner folds; run_of_row labels each row of x.
LambdaSelection select_lambda(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                              std::span<const int> run_of_row, std::span<const double> grid,
                              SelectionCriterion criterion = SelectionCriterion::r2);

struct FoldFit {
  RidgeFit<double> ridge;
  Standardizer<double> x_scaler;
  Standardizer<double> y_scaler;
  std::vector<bool> degenerate;
};

/// Cross-validated predictions in the original units of the series.
struct CvResult {
  Eigen::MatrixXd predicted;      // n x v; rows outside every test set are zero
  std::vector<int> fold_of_tr;    // -1 for TRs no fold tests
  std::vector<FoldFit> folds;
  FoldPlan plan;

  /// Predictions and truth for fold f's test rows, z-scored with that fold's
  /// training statistics of the series.
  std::pair<Eigen::MatrixXd, Eigen::MatrixXd> standardized_fold(int f, const Eigen::MatrixXd& truth) const;
  std::vector<Index> scored_trs() const;
};

/// For each fold: standardize on train rows, select lambda per voxel with
/// inner leave-one-run-out, fit, and predict the test rows. `designs` holds
/// one shared design or one per fold.
CvResult fit_predict_cv(std::span<const DesignMatrix> designs, const VoxelSeries& series, const FoldPlan& plan,
                        const EncoderConfig& cfg = {});

inline CvResult fit_predict_cv(const DesignMatrix& design, const VoxelSeries& series, const FoldPlan& plan,
                               const EncoderConfig& cfg = {}) {
  return fit_predict_cv(std::span<const DesignMatrix>(&design, 1), series, plan, cfg);
}

/// Explicit train/test windows with a validation split for lambda selection.
struct SplitFit {
  Eigen::MatrixXd predicted;  // test rows x v, original units
  LambdaSelection selection;
};

SplitFit fit_predict_split(const Eigen::MatrixXd& design, const Eigen::MatrixXd& series,
                           std::span<const Index> train, std::span<const Index> test,
                           std::span<const InnerSplit> inner, const EncoderConfig& cfg);

}  // namespace voxalign
