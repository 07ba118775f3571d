#include "voxalign/preprocess.hpp"

#include <cmath>

namespace voxalign {

std::vector<Index> word_trs(const WordTiming& timing, const SeriesGeometry& geometry) {
  throw_if_invalid(validate(timing), "word timing");
  std::vector<Index> out(static_cast<std::size_t>(timing.words()));
  for (Index w = 0; w < timing.words(); ++w) {
    const int run = timing.run_of_word[w];
    if (run < 0 || static_cast<std::size_t>(run) >= geometry.runs.size())
      throw Error("word " + std::to_string(w) + " assigned to unknown run " + std::to_string(run));
    const TrRange r = geometry.runs[run];
    // Onsets sitting on a TR boundary belong to the later TR.
    const auto local = static_cast<Index>(std::floor(timing.onsets[w] / geometry.tr_seconds + 1e-9));
    if (local < 0 || local >= r.size())
      throw Error("word " + std::to_string(w) + " outside run bounds (onset " + std::to_string(timing.onsets[w]) +
                  " s, run " + std::to_string(run) + ")");
    out[w] = r.begin + local;
  }
  return out;
}

Eigen::MatrixXd downsample_to_trs(const Eigen::MatrixXd& reduced, const WordTiming& timing,
                                  const SeriesGeometry& geometry) {
  if (reduced.rows() != timing.words())
    throw Error("downsample_to_trs: " + std::to_string(reduced.rows()) + " feature rows for " +
                std::to_string(timing.words()) + " words");
  const auto tr = word_trs(timing, geometry);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(geometry.n, reduced.cols());
  Eigen::VectorXd count = Eigen::VectorXd::Zero(geometry.n);
  for (Index w = 0; w < reduced.rows(); ++w) {
    out.row(tr[w]) += reduced.row(w);
    count(tr[w]) += 1.0;
  }
  for (Index t = 0; t < geometry.n; ++t)
    if (count(t) > 0) out.row(t) /= count(t);
  return out;
}

DesignMatrix build_lagged(const Eigen::MatrixXd& tr_features, const SeriesGeometry& geometry, int lag_count) {
  if (lag_count < 1) throw Error("build_lagged: lag_count must be >= 1");
  if (tr_features.rows() != geometry.n)
    throw Error("build_lagged: feature rows != TR count");
  const Index k = tr_features.cols();
  DesignMatrix d;
  d.lag_count = lag_count;
  d.components = static_cast<int>(k);
  d.values = Eigen::MatrixXd::Zero(geometry.n, lag_count * k);
  for (const TrRange& run : geometry.runs)
    for (Index t = run.begin; t < run.end; ++t)
      for (int lag = 1; lag <= lag_count; ++lag)
        if (t - lag >= run.begin) d.values.block(t, (lag - 1) * k, 1, k) = tr_features.row(t - lag);
  return d;
}

DesignMatrix build_design(const FeatureMatrix& x, const PcaModel<double>& pca, const WordTiming& timing,
                          const SeriesGeometry& geometry, int lag_count) {
  const Eigen::MatrixXd reduced = apply_pca(pca, x.values);
  return build_lagged(downsample_to_trs(reduced, timing, geometry), geometry, lag_count);
}

DesignMatrix build_design(const FeatureMatrix& x, const WordTiming& timing, const SeriesGeometry& geometry,
                          const PreprocessConfig& cfg, std::span<const Index> train_trs) {
  throw_if_invalid(validate(x), "feature matrix");
  if (x.rows() != timing.words())
    throw Error("feature matrix has " + std::to_string(x.rows()) + " rows but timing lists " +
                std::to_string(timing.words()) + " words");
  if (cfg.pca_mode == PcaMode::full)
    return build_design(x, fit_pca(x.values, cfg.pca_components), timing, geometry, cfg.lag_count);

  std::vector<bool> in_train(static_cast<std::size_t>(geometry.n), false);
  for (Index t : train_trs) in_train[t] = true;
  const auto tr = word_trs(timing, geometry);
  std::vector<Index> words;
  for (Index w = 0; w < x.rows(); ++w)
    if (in_train[tr[w]]) words.push_back(w);
  const Eigen::MatrixXd train_words = take_rows(x.values, std::span<const Index>(words));
  return build_design(x, fit_pca(train_words, cfg.pca_components), timing, geometry, cfg.lag_count);
}

}  // namespace voxalign
