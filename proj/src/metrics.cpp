#include "voxalign/metrics.hpp"

#include "voxalign/pca.hpp"
#include "voxalign/rng.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace voxalign {

namespace {

double block_distance(const Eigen::MatrixXd& a, Index ra, const Eigen::MatrixXd& b, Index rb, Index len,
                      BlockDistance kind) {
  const auto x = a.middleRows(ra, len);
  const auto y = b.middleRows(rb, len);
  if (kind == BlockDistance::euclidean) return (x - y).norm();
  const double mx = x.mean(), my = y.mean();
  const double sxy = ((x.array() - mx) * (y.array() - my)).sum();
  const double sxx = (x.array() - mx).square().sum(), syy = (y.array() - my).square().sum();
  if (!(sxx > 0) || !(syy > 0)) return 1.0;
  return 1.0 - sxy / std::sqrt(sxx * syy);
}

double score_pair(const FoldBlocks& fold, Index a, Index b, const TwentyVTwentyConfig& cfg) {
  const Index L = cfg.block_len;
  const double correct = block_distance(fold.pred, a, fold.truth, a, L, cfg.distance) +
                         block_distance(fold.pred, b, fold.truth, b, L, cfg.distance);
  const double swapped = block_distance(fold.pred, a, fold.truth, b, L, cfg.distance) +
                         block_distance(fold.pred, b, fold.truth, a, L, cfg.distance);
  if (correct < swapped) return 1.0;
  if (correct == swapped) return 0.5;
  return 0.0;
}

}  // namespace

std::vector<Index> block_windows(std::span<const Index> trs, const SeriesGeometry& geometry, Index block_len) {
  std::vector<Index> starts;
  const auto count = static_cast<Index>(trs.size());
  for (Index i = 0; i + block_len <= count; ++i) {
    const Index first = trs[i], last = trs[i + block_len - 1];
    const int run = geometry.run_of(first);
    if (last - first == block_len - 1 && run >= 0 && run == geometry.run_of(last)) starts.push_back(i);
  }
  return starts;
}

double twenty_v_twenty_fold(const FoldBlocks& fold, const SeriesGeometry& geometry, const TwentyVTwentyConfig& cfg,
                            int fold_index) {
  if (cfg.block_len < 1 || cfg.reps < 1) throw Error("20v20: block_len and reps must be >= 1");
  if (fold.pred.rows() != fold.truth.rows() || fold.pred.cols() != fold.truth.cols() ||
      fold.pred.rows() != static_cast<Index>(fold.trs.size()))
    throw Error("20v20: prediction, truth and TR list disagree in shape");
  for (std::size_t i = 1; i < fold.trs.size(); ++i)
    if (fold.trs[i] <= fold.trs[i - 1]) throw Error("20v20: fold TRs must be strictly ascending");
  const Index L = cfg.block_len;
  if (fold.pred.rows() < 2 * L)
    throw Error("20v20: fold " + std::to_string(fold_index) + " has " + std::to_string(fold.pred.rows()) +
                " test TRs, fewer than 2 * block_len = " + std::to_string(2 * L));

  const std::vector<Index> windows = block_windows(std::span<const Index>(fold.trs), geometry, L);
  const auto w = static_cast<Index>(windows.size());
  // Unordered disjoint pairs; windows are sorted, so a pair is disjoint iff
  // the later start is at least L rows after the earlier.
  Index pairs = 0;
  for (Index i = 0, j = 0; i < w; ++i) {
    while (j < w && windows[j] < windows[i] + L) ++j;
    pairs += w - j;
  }
  if (pairs == 0) throw Error("20v20: fold " + std::to_string(fold_index) + " has no two disjoint blocks");

  double total = 0.0;
  if (pairs <= cfg.reps) {
    for (Index i = 0; i < w; ++i)
      for (Index j = i + 1; j < w; ++j)
        if (windows[j] >= windows[i] + L) total += score_pair(fold, windows[i], windows[j], cfg);
    return total / static_cast<double>(pairs);
  }
  for (Index rep = 0; rep < cfg.reps; ++rep) {
    Rng rng({cfg.seed, static_cast<std::uint64_t>(fold_index), static_cast<std::uint64_t>(rep)});
    Index a, b;
    do {
      a = windows[rng.below(static_cast<std::uint64_t>(w))];
      b = windows[rng.below(static_cast<std::uint64_t>(w))];
    } while (std::abs(a - b) < L);
    total += score_pair(fold, a, b, cfg);
  }
  return total / static_cast<double>(cfg.reps);
}

TwentyVTwentyResult twenty_v_twenty(std::span<const FoldBlocks> folds, const SeriesGeometry& geometry,
                                    const TwentyVTwentyConfig& cfg) {
  if (folds.empty()) throw Error("20v20: no folds");
  TwentyVTwentyResult out;
  double sum = 0.0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    out.per_fold.push_back(twenty_v_twenty_fold(folds[f], geometry, cfg, static_cast<int>(f)));
    sum += out.per_fold.back();
  }
  out.accuracy = sum / static_cast<double>(folds.size());
  return out;
}

TwentyVTwentyResult twenty_v_twenty(const CvResult& cv, const VoxelSeries& series, const TwentyVTwentyConfig& cfg) {
  std::vector<FoldBlocks> folds;
  for (std::size_t f = 0; f < cv.plan.folds.size(); ++f) {
    auto [pred, truth] = cv.standardized_fold(static_cast<int>(f), series.values);
    folds.push_back({std::move(pred), std::move(truth), cv.plan.folds[f].test});
  }
  return twenty_v_twenty(std::span<const FoldBlocks>(folds), SeriesGeometry::of(series), cfg);
}

std::vector<Eigen::VectorXd> fold_pearson(const CvResult& cv, const VoxelSeries& series) {
  std::vector<Eigen::VectorXd> out;
  for (const Fold& fold : cv.plan.folds) {
    const std::span<const Index> rows(fold.test);
    out.push_back(pearson_per_voxel(take_rows(cv.predicted, rows), take_rows(series.values, rows)).r);
  }
  return out;
}

Eigen::MatrixXd mask_columns(const Eigen::MatrixXd& m, const std::vector<bool>& mask) {
  if (static_cast<Index>(mask.size()) != m.cols()) throw Error("mask length != voxel count");
  std::vector<Index> cols;
  for (std::size_t j = 0; j < mask.size(); ++j)
    if (mask[j]) cols.push_back(static_cast<Index>(j));
  Eigen::MatrixXd out(m.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Index>(j)) = m.col(cols[j]);
  return out;
}

VoxelSeries mask_voxels(const VoxelSeries& s, const std::vector<bool>& mask) {
  VoxelSeries out = s;
  out.values = mask_columns(s.values, mask);
  return out;
}

double noise_ceiling_pair(const VoxelSeries& target, const VoxelSeries& source, const FoldPlan& plan,
                          const NoiseCeilingConfig& cfg) {
  if (target.n() != source.n()) throw Error("noise ceiling: source and target differ in TR count");
  if (target.runs != source.runs) throw Error("noise ceiling: source and target differ in run structure");
  const auto pca = fit_pca(source.values, cfg.reducer_k);
  DesignMatrix design;
  design.values = apply_pca(pca, source.values);
  design.lag_count = 1;
  design.components = cfg.reducer_k;
  const CvResult cv = fit_predict_cv(design, target, plan, cfg.encoder);
  return twenty_v_twenty(cv, target, cfg.metric).accuracy;
}

TargetCeiling noise_ceiling(const VoxelSeries& target, std::span<const VoxelSeries> sources, const FoldPlan& plan,
                            const NoiseCeilingConfig& cfg) {
  if (sources.empty()) throw Error("noise ceiling: no source subjects");
  TargetCeiling out;
  double sum = 0.0;
  for (const VoxelSeries& s : sources) {
    out.per_source.push_back(noise_ceiling_pair(target, s, plan, cfg));
    sum += out.per_source.back();
  }
  out.ceiling = sum / static_cast<double>(sources.size());
  return out;
}

NoiseCeilingTable noise_ceiling_all(std::span<const VoxelSeries> subjects, const FoldPlan& plan,
                                    const NoiseCeilingConfig& cfg) {
  const auto m = static_cast<Index>(subjects.size());
  if (m < 2) throw Error("noise ceiling: need at least 2 subjects");
  NoiseCeilingTable t;
  t.pairs = Eigen::MatrixXd::Constant(m, m, std::nan(""));
  t.per_target.resize(m);
  for (Index i = 0; i < m; ++i) {
    t.subjects.push_back(subjects[i].subject.empty() ? "S" + std::to_string(i + 1) : subjects[i].subject);
    double sum = 0.0;
    for (Index j = 0; j < m; ++j) {
      if (i == j) continue;
      t.pairs(i, j) = noise_ceiling_pair(subjects[i], subjects[j], plan, cfg);
      sum += t.pairs(i, j);
    }
    t.per_target(i) = sum / static_cast<double>(m - 1);
  }
  t.mean = t.per_target.mean();
  const double var = (t.per_target.array() - t.mean).square().sum() / static_cast<double>(m - 1);
  t.sem = std::sqrt(var / static_cast<double>(m));
  return t;
}

std::string format_mean_sem(double mean, double sem) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.2f +/- %.2g (sem)", mean, sem);
  return buf;
}

std::string NoiseCeilingTable::report() const {
  std::ostringstream os;
  char buf[128];
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    std::snprintf(buf, sizeof buf, "target %s: %.4f\n", subjects[i].c_str(), per_target(static_cast<Index>(i)));
    os << buf;
  }
  os << "noise ceiling (20v20): " << format_mean_sem(mean, sem) << " across " << subjects.size() << " targets\n";
  return os.str();
}

std::string NoiseCeilingTable::pairs_csv() const {
  std::ostringstream os;
  os << "target,source,acc_20v20\n";
  char buf[64];
  for (Index i = 0; i < pairs.rows(); ++i)
    for (Index j = 0; j < pairs.cols(); ++j) {
      if (i == j) continue;
      std::snprintf(buf, sizeof buf, "%.17g", pairs(i, j));
      os << subjects[i] << "," << subjects[j] << "," << buf << "\n";
    }
  return os.str();
}

}  // namespace voxalign
