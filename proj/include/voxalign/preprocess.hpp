#pragma once

#include "voxalign/datamodel.hpp"
#include "voxalign/pca.hpp"
#include "voxalign/standardize.hpp"

#include <span>

namespace voxalign {

enum class PcaMode {
  full,    // fit on every stimulus word before any split
  strict,  // fit only on words whose TR is in the training set
};

struct PreprocessConfig {
  int pca_components = 10;
  int lag_count = 4;
  PcaMode pca_mode = PcaMode::full;
};

/// TR index (global) of every word; throws when a word falls outside its run.
std::vector<Index> word_trs(const WordTiming& timing, const SeriesGeometry& geometry);

/// Row t is the mean of the rows of `reduced` whose word falls in TR t
/// ([t*TR, (t+1)*TR) of its run); TRs without words are zero rows.
Eigen::MatrixXd downsample_to_trs(const Eigen::MatrixXd& reduced, const WordTiming& timing,
                                  const SeriesGeometry& geometry);

/// Row t = [f(t-1), f(t-2), ..., f(t-lag_count)], zero where the lag
/// reaches before the start of t's run.
DesignMatrix build_lagged(const Eigen::MatrixXd& tr_features, const SeriesGeometry& geometry,
                          int lag_count = 4);

/// PCA -> TR averaging -> lag concatenation. `pca` must already be fit.
DesignMatrix build_design(const FeatureMatrix& x, const PcaModel<double>& pca, const WordTiming& timing,
                          const SeriesGeometry& geometry, int lag_count);

/// Full pipeline with the PCA fit chosen by cfg.pca_mode. In strict mode the
/// PCA is fit on words whose TR appears in `train_trs`.
DesignMatrix build_design(const FeatureMatrix& x, const WordTiming& timing, const SeriesGeometry& geometry,
                          const PreprocessConfig& cfg, std::span<const Index> train_trs = {});

}  // namespace voxalign
