#pragma once

#include "voxalign/datamodel.hpp"
#include "voxalign/encoder.hpp"

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>

namespace voxalign {

template <typename Scalar>
struct PearsonResult {
  Vector<Scalar> r;
  std::vector<bool> degenerate;  // zero variance in prediction or truth
};

/// Column-wise Pearson correlation. Columns with no spread in either input
/// get r = 0 and a degeneracy flag.
template <typename DerivedA, typename DerivedB>
PearsonResult<typename DerivedA::Scalar> pearson_per_voxel(const Eigen::MatrixBase<DerivedA>& pred,
                                                           const Eigen::MatrixBase<DerivedB>& truth) {
  using Scalar = typename DerivedA::Scalar;
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) throw Error("pearson: shape mismatch");
  if (pred.rows() < 3) throw Error("pearson: need at least 3 rows");
  const Matrix<Scalar> a = pred.rowwise() - pred.colwise().mean();
  const Matrix<Scalar> b = truth.rowwise() - truth.colwise().mean();
  PearsonResult<Scalar> out;
  out.r.resize(pred.cols());
  out.degenerate.assign(static_cast<std::size_t>(pred.cols()), false);
  for (Index j = 0; j < pred.cols(); ++j) {
    const Scalar saa = a.col(j).squaredNorm(), sbb = b.col(j).squaredNorm();
    // Spread below rounding noise of the column's magnitude counts as constant.
    const Scalar fa = pred.col(j).squaredNorm(), fb = truth.col(j).squaredNorm();
    const Scalar eps = Scalar(1e-24);
    if (!(saa > eps * fa) || !(sbb > eps * fb) || saa == 0 || sbb == 0) {
      out.r(j) = 0;
      out.degenerate[j] = true;
      continue;
    }
    const Scalar r = a.col(j).dot(b.col(j)) / std::sqrt(saa * sbb);
    out.r(j) = std::clamp(r, Scalar(-1), Scalar(1));
  }
  return out;
}

enum class BlockDistance { euclidean, correlation };

struct TwentyVTwentyConfig {
  Index block_len = 20;
  Index reps = 1000;
  std::uint64_t seed = 1234;
  BlockDistance distance = BlockDistance::euclidean;
};

/// One fold's held-out rows. `trs` gives the TR index of each row, ascending.
struct FoldBlocks {
  Eigen::MatrixXd pred;
  Eigen::MatrixXd truth;
  std::vector<Index> trs;
};

struct TwentyVTwentyResult {
  std::vector<double> per_fold;
  double accuracy = 0.5;
};

/// Start rows of every window of block_len consecutive TRs inside one run.
std::vector<Index> block_windows(std::span<const Index> trs, const SeriesGeometry& geometry, Index block_len);

/// Accuracy of matching two disjoint blocks to their predictions, averaged
/// over repetitions. When the fold has at most `reps` disjoint block pairs,
/// every pair is scored once instead of sampling.
double twenty_v_twenty_fold(const FoldBlocks& fold, const SeriesGeometry& geometry, const TwentyVTwentyConfig& cfg,
                            int fold_index);

/// Mean over folds of the per-fold accuracy.
TwentyVTwentyResult twenty_v_twenty(std::span<const FoldBlocks> folds, const SeriesGeometry& geometry,
                                    const TwentyVTwentyConfig& cfg);

/// Convenience over cross-validated output, on fold-standardized data.
TwentyVTwentyResult twenty_v_twenty(const CvResult& cv, const VoxelSeries& series, const TwentyVTwentyConfig& cfg);

/// Per-fold held-out Pearson vectors for a cross-validated fit.
std::vector<Eigen::VectorXd> fold_pearson(const CvResult& cv, const VoxelSeries& series);

/// Restricts columns to a voxel mask.
Eigen::MatrixXd mask_columns(const Eigen::MatrixXd& m, const std::vector<bool>& mask);
VoxelSeries mask_voxels(const VoxelSeries& s, const std::vector<bool>& mask);

struct NoiseCeilingConfig {
  int reducer_k = 40;
  EncoderConfig encoder;
  TwentyVTwentyConfig metric;
};

/// 20v20 accuracy of predicting target from a PCA reduction of source.
double noise_ceiling_pair(const VoxelSeries& target, const VoxelSeries& source, const FoldPlan& plan,
                          const NoiseCeilingConfig& cfg);

struct TargetCeiling {
  std::vector<double> per_source;
  double ceiling = 0.5;  // mean over sources
};

TargetCeiling noise_ceiling(const VoxelSeries& target, std::span<const VoxelSeries> sources, const FoldPlan& plan,
                            const NoiseCeilingConfig& cfg);

struct NoiseCeilingTable {
  std::vector<std::string> subjects;
  Eigen::MatrixXd pairs;       // target x source, NaN on the diagonal
  Eigen::VectorXd per_target;
  double mean = 0.0;
  double sem = 0.0;

  /// One line per target followed by "mean +/- sem (sem)" across targets.
  std::string report() const;
  std::string pairs_csv() const;
};

/// Every subject as target, every other subject as source.
NoiseCeilingTable noise_ceiling_all(std::span<const VoxelSeries> subjects, const FoldPlan& plan,
                                    const NoiseCeilingConfig& cfg);

std::string format_mean_sem(double mean, double sem);

}  // namespace voxalign
