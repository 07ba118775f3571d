#pragma once

#include "voxalign/datamodel.hpp"
#include "voxalign/encoder.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>

namespace voxalign {

enum class LabelRule {
  any,       // TR flagged if any of its words carries the feature
  majority,  // TR flagged if more than half of its words do
};

using TrMasks = std::map<std::string, std::vector<bool>>;

TrMasks label_trs(const DiscourseLabels& labels, const WordTiming& timing, const SeriesGeometry& geometry,
                  LabelRule rule = LabelRule::any);

/// Uniform sample without replacement of `count` TRs from the candidates,
/// returned ascending. Deterministic in (seed, feature).
std::vector<Index> sample_trs(std::span<const Index> candidates, Index count, std::uint64_t seed,
                              const std::string& feature = "");

/// Same, drawing from the set bits of a TR mask.
std::vector<Index> sample_feature_trs(const std::vector<bool>& tr_mask, Index count, std::uint64_t seed,
                                      const std::string& feature = "");

struct DiscourseScore {
  Eigen::VectorXd r;          // per voxel
  double mean = 0.0;          // mean over voxels
  std::vector<Index> trs;     // rows the score was computed on
};

/// Per-voxel Pearson restricted to the sampled TR rows.
DiscourseScore discourse_pearson(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth,
                                 std::span<const Index> sampled_trs);

struct DiscourseConfig {
  Index sample_count = 160;
  std::uint64_t seed = 7;
  LabelRule rule = LabelRule::any;
};

struct FeatureScore {
  std::string feature;
  Index labeled = 0;      // labeled TRs among the scorable ones
  DiscourseScore score;
};

struct DiscourseReport {
  std::vector<FeatureScore> features;
  FeatureScore random_control;  // equal-size sample from all scorable TRs
  FeatureScore full;            // every scorable TR
};

/// Feature-restricted alignment over held-out predictions. Only TRs in
/// `scorable` (those with a prediction) are eligible for sampling.
DiscourseReport discourse_analysis(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth,
                                   std::span<const Index> scorable, const TrMasks& masks,
                                   const DiscourseConfig& cfg);

struct BalancedConfig {
  Index train_last = 500;
  Index test_first = 700;
  Index sample_count = 74;
  double validate_fraction = 0.2;  // trailing share of the training window
  std::uint64_t seed = 7;
  LabelRule rule = LabelRule::any;
  Index min_trs = 1200;
  EncoderConfig encoder;
};

struct BalancedFeature {
  std::string feature;
  Index train_labeled = 0;
  Index test_labeled = 0;
  DiscourseScore score;
};

struct BalancedReport {
  TrRange train;
  TrRange test;
  std::vector<BalancedFeature> features;
  BalancedFeature random_control;
  DiscourseScore full;
};

/// Fit on the final train_last TRs, predict the first test_first, and score
/// each feature on sample_count TRs of the test window.
BalancedReport balanced_protocol(const DesignMatrix& design, const VoxelSeries& series, const DiscourseLabels& labels,
                                 const WordTiming& timing, const BalancedConfig& cfg);

}  // namespace voxalign
