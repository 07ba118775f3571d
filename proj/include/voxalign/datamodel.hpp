#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxalign {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Thrown for malformed inputs and violated preconditions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Half-open TR range [begin, end).
struct TrRange {
  Index begin = 0;
  Index end = 0;
  Index size() const { return end - begin; }
  bool contains(Index t) const { return t >= begin && t < end; }
  friend bool operator==(const TrRange&, const TrRange&) = default;
};

struct FeatureMeta {
  std::string model;
  int layer = 0;
  int sequence_length = 1;
  friend bool operator==(const FeatureMeta&, const FeatureMeta&) = default;
};

/// Per-word model representations for one (model, layer, sequence length).
struct FeatureMatrix {
  Eigen::MatrixXd values;  // words x dims
  FeatureMeta meta;
  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
};

/// One participant's voxel activity, TRs x voxels, with run boundaries.
struct VoxelSeries {
  Eigen::MatrixXd values;
  std::vector<TrRange> runs;
  double tr_seconds = 2.0;
  std::string subject;
  Index n() const { return values.rows(); }
  Index voxels() const { return values.cols(); }
};

/// Run layout shared by a series and everything aligned to it.
struct SeriesGeometry {
  Index n = 0;
  std::vector<TrRange> runs;
  double tr_seconds = 2.0;

  static SeriesGeometry of(const VoxelSeries& s) { return {s.n(), s.runs, s.tr_seconds}; }
  /// Run index holding TR t, or -1.
  int run_of(Index t) const;
};

struct WordTiming {
  std::vector<double> onsets;   // seconds from the start of the word's run
  std::vector<int> run_of_word;
  double word_interval = 0.5;
  Index words() const { return static_cast<Index>(onsets.size()); }
};

/// TR-level regressors; cols = lag_count * components.
struct DesignMatrix {
  Eigen::MatrixXd values;
  int lag_count = 4;
  int components = 10;
  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
};

struct Fold {
  std::vector<Index> train;
  std::vector<Index> test;
  int test_run = 0;
};

struct FoldPlan {
  std::vector<Fold> folds;
  Index trim = 10;
};

/// Word-level one-hot vectors keyed by feature name.
struct DiscourseLabels {
  Index words = 0;
  std::map<std::string, std::vector<std::uint8_t>> features;
};

struct RoiMaskSet {
  Index voxels = 0;
  std::map<std::string, std::vector<bool>> masks;
};

struct RecordKey {
  std::string model;
  int layer = 0;
  int seqlen = 0;
  std::string subject;
  int fold = 0;
  auto operator<=>(const RecordKey&) const = default;
};

/// One (model, layer, seqlen, subject, fold) scoring outcome.
struct ResultRecord {
  RecordKey key;
  Eigen::VectorXd pearson;
  double acc_20v20 = 0.5;
  Eigen::VectorXd lambda_chosen;
};

struct Violation {
  std::string what;
  std::string where;
};

using Violations = std::vector<Violation>;

Violations validate(const FeatureMatrix& x);
Violations validate(const VoxelSeries& y);
Violations validate(const WordTiming& timing);
Violations validate(const DesignMatrix& d);
Violations validate(const FoldPlan& plan, const SeriesGeometry& geometry);
Violations validate(const DiscourseLabels& labels);
Violations validate(const RoiMaskSet& masks);
Violations validate(const ResultRecord& record);

/// Partition check shared by VoxelSeries validation and run-table loading.
Violations validate_runs(const std::vector<TrRange>& runs, Index n);

/// Throws Error carrying every violation when the list is non-empty.
void throw_if_invalid(const Violations& v, const std::string& context);

}  // namespace voxalign
