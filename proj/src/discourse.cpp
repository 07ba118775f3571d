#include "voxalign/discourse.hpp"

#include "voxalign/metrics.hpp"
#include "voxalign/preprocess.hpp"
#include "voxalign/rng.hpp"

#include <algorithm>
#include <cmath>

namespace voxalign {

namespace {

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

std::vector<Index> mask_indices(const std::vector<bool>& mask) {
  std::vector<Index> out;
  for (std::size_t t = 0; t < mask.size(); ++t)
    if (mask[t]) out.push_back(static_cast<Index>(t));
  return out;
}

}  // namespace

TrMasks label_trs(const DiscourseLabels& labels, const WordTiming& timing, const SeriesGeometry& geometry,
                  LabelRule rule) {
  if (labels.words != timing.words())
    throw Error("label_trs: labels cover " + std::to_string(labels.words) + " words, timing " +
                std::to_string(timing.words()));
  const auto tr = word_trs(timing, geometry);
  std::vector<int> words_in_tr(static_cast<std::size_t>(geometry.n), 0);
  for (Index t : tr) ++words_in_tr[t];
  TrMasks out;
  for (const auto& [name, flags] : labels.features) {
    std::vector<int> hits(static_cast<std::size_t>(geometry.n), 0);
    for (Index w = 0; w < labels.words; ++w)
      if (flags[w]) ++hits[tr[w]];
    std::vector<bool> mask(static_cast<std::size_t>(geometry.n), false);
    for (Index t = 0; t < geometry.n; ++t)
      mask[t] = rule == LabelRule::any ? hits[t] > 0 : 2 * hits[t] > words_in_tr[t];
    out[name] = std::move(mask);
  }
  return out;
}

std::vector<Index> sample_trs(std::span<const Index> candidates, Index count, std::uint64_t seed,
                              const std::string& feature) {
  if (count < 0) throw Error("sample_trs: negative count");
  if (static_cast<Index>(candidates.size()) < count)
    throw Error("insufficient labeled TRs for feature '" + feature + "': " + std::to_string(candidates.size()) +
                " available, " + std::to_string(count) + " required");
  std::vector<Index> pool(candidates.begin(), candidates.end());
  std::sort(pool.begin(), pool.end());
  Rng rng({seed, name_hash(feature)});
  for (Index i = 0; i < count; ++i) {
    const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(pool.size() - i)));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(static_cast<std::size_t>(count));
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<Index> sample_feature_trs(const std::vector<bool>& tr_mask, Index count, std::uint64_t seed,
                                      const std::string& feature) {
  const auto idx = mask_indices(tr_mask);
  return sample_trs(std::span<const Index>(idx), count, seed, feature);
}

DiscourseScore discourse_pearson(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth,
                                 std::span<const Index> sampled_trs) {
  for (Index t : sampled_trs)
    if (t < 0 || t >= pred.rows()) throw Error("discourse_pearson: sampled TR " + std::to_string(t) + " has no prediction");
  DiscourseScore s;
  s.trs.assign(sampled_trs.begin(), sampled_trs.end());
  std::sort(s.trs.begin(), s.trs.end());
  const std::span<const Index> rows(s.trs);
  s.r = pearson_per_voxel(take_rows(pred, rows), take_rows(truth, rows)).r;
  s.mean = s.r.size() ? s.r.mean() : 0.0;
  return s;
}

DiscourseReport discourse_analysis(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth,
                                   std::span<const Index> scorable, const TrMasks& masks, const DiscourseConfig& cfg) {
  DiscourseReport report;
  for (const auto& [name, mask] : masks) {
    std::vector<Index> candidates;
    for (Index t : scorable)
      if (mask.at(t)) candidates.push_back(t);
    FeatureScore fs;
    fs.feature = name;
    fs.labeled = static_cast<Index>(candidates.size());
    const auto sampled = sample_trs(std::span<const Index>(candidates), cfg.sample_count, cfg.seed, name);
    fs.score = discourse_pearson(pred, truth, std::span<const Index>(sampled));
    report.features.push_back(std::move(fs));
  }
  report.random_control.feature = "Random";
  report.random_control.labeled = static_cast<Index>(scorable.size());
  const auto random = sample_trs(scorable, cfg.sample_count, cfg.seed, "Random");
  report.random_control.score = discourse_pearson(pred, truth, std::span<const Index>(random));
  report.full.feature = "Full";
  report.full.labeled = static_cast<Index>(scorable.size());
  report.full.score = discourse_pearson(pred, truth, scorable);
  return report;
}

BalancedReport balanced_protocol(const DesignMatrix& design, const VoxelSeries& series, const DiscourseLabels& labels,
                                 const WordTiming& timing, const BalancedConfig& cfg) {
  const Index n = series.n();
  if (n < cfg.min_trs)
    throw Error("balanced protocol: series has " + std::to_string(n) + " TRs, needs at least " +
                std::to_string(cfg.min_trs));
  if (cfg.train_last < 2 || cfg.test_first < 3 || cfg.test_first > n - cfg.train_last)
    throw Error("balanced protocol: train/test windows must be disjoint and fit in the series");
  if (design.rows() != n) throw Error("balanced protocol: design rows != series TRs");

  BalancedReport report;
  report.train = {n - cfg.train_last, n};
  report.test = {0, cfg.test_first};
  std::vector<Index> train, test;
  for (Index t = report.train.begin; t < report.train.end; ++t) train.push_back(t);
  for (Index t = report.test.begin; t < report.test.end; ++t) test.push_back(t);

  // Contiguous inner split of the training window: leading share fits, trailing share validates.
  const auto n_val = static_cast<Index>(std::llround(cfg.validate_fraction * static_cast<double>(cfg.train_last)));
  if (n_val < 3 || n_val >= cfg.train_last) throw Error("balanced protocol: bad validation fraction");
  InnerSplit inner;
  for (Index i = 0; i < cfg.train_last; ++i) (i < cfg.train_last - n_val ? inner.train : inner.validate).push_back(i);

  const SplitFit fit = fit_predict_split(design.values, series.values, std::span<const Index>(train),
                                         std::span<const Index>(test), std::span<const InnerSplit>(&inner, 1),
                                         cfg.encoder);
  // Predictions indexed by absolute TR; the test window starts at 0.
  const Eigen::MatrixXd truth = series.values.topRows(cfg.test_first);
  const Eigen::MatrixXd& pred = fit.predicted;

  const TrMasks masks = label_trs(labels, timing, SeriesGeometry::of(series), cfg.rule);
  for (const auto& [name, mask] : masks) {
    BalancedFeature bf;
    bf.feature = name;
    std::vector<Index> candidates;
    for (Index t = report.train.begin; t < report.train.end; ++t) bf.train_labeled += mask[t] ? 1 : 0;
    for (Index t = report.test.begin; t < report.test.end; ++t)
      if (mask[t]) candidates.push_back(t);
    bf.test_labeled = static_cast<Index>(candidates.size());
    const auto sampled = sample_trs(std::span<const Index>(candidates), cfg.sample_count, cfg.seed, name);
    bf.score = discourse_pearson(pred, truth, std::span<const Index>(sampled));
    report.features.push_back(std::move(bf));
  }
  report.random_control.feature = "Random";
  report.random_control.test_labeled = cfg.test_first;
  const auto random = sample_trs(std::span<const Index>(test), cfg.sample_count, cfg.seed, "Random");
  report.random_control.score = discourse_pearson(pred, truth, std::span<const Index>(random));
  report.full = discourse_pearson(pred, truth, std::span<const Index>(test));
  return report;
}

}  // namespace voxalign
