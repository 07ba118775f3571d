#pragma once

#include "voxalign/datamodel.hpp"
#include "voxalign/ingest.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace voxalign {

/// Synthetic experiment with a known linear response through the same lag
/// structure the design matrix uses.
struct SynthConfig {
  Index words = 5176;
  Index dims = 64;
  Index runs = 4;
  Index trs_per_run = 0;      // 0 derives it from the words of each run; larger pads
  Index voxels = 500;
  double noise_sigma = 1.0;   // noise scale relative to unit-variance signal
  Index feature_rank = 10;    // latent dimensions spanned by the features
  Index signal_rank = 10;     // leading latent dimensions driving the response
  std::vector<double> lag_profile = {1.0, 0.8, 0.5, 0.25};
  double word_interval = 0.5;
  double tr_seconds = 2.0;
  std::map<std::string, Index> feature_trs;   // TRs to label per discourse feature
  std::map<std::string, double> feature_snr;  // signal gain on a feature's TRs (default 1)
  Index label_margin = 10;    // labeled TRs keep this distance from run ends
  double ar1 = 0.0;           // AR(1) coefficient of the noise, 0 = white
  std::uint64_t seed = 1;
  std::string subject = "S1";
};

/// Stimulus and run layout matching the public reading dataset: 5176 words,
/// four runs, discourse label counts of its annotation.
SynthConfig paper_geometry();

Violations validate(const SynthConfig& cfg);

struct GroundTruth {
  Eigen::MatrixXd latent;   // n x (lags * signal_rank), lagged TR-level latent
  Eigen::MatrixXd weights;  // (lags * signal_rank) x voxels
  Eigen::VectorXd gains;    // per TR
  Eigen::MatrixXd signal;   // n x voxels, gains ⊙ (latent * weights)
};

struct SynthDataset {
  FeatureMatrix features;
  Eigen::MatrixXd word_latent;  // words x feature_rank, centered
  Eigen::MatrixXd mixing;       // feature_rank x dims; features = word_latent * mixing
  WordTiming timing;
  VoxelSeries series;
  DiscourseLabels labels;
  GroundTruth truth;
};

/// TR count of each run for the configured stimulus.
std::vector<Index> synth_run_lengths(const SynthConfig& cfg);

SynthDataset generate(const SynthConfig& cfg);

/// Subjects sharing the noiseless signal of generate(cfg):
/// sqrt(rho) * shared + sqrt(1 - rho) * private, z-scored per voxel.
std::vector<VoxelSeries> twin_subjects(const SynthConfig& cfg, int n_subjects, double rho);

/// Writes latent, weights, gains and the noiseless signal as FMAT files.
void write_ground_truth(const fs::path& dir, const GroundTruth& truth);
GroundTruth load_ground_truth(const fs::path& dir);

}  // namespace voxalign
