#include "voxalign/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace voxalign {

namespace {

std::string cell(Index r, Index c) {
  std::ostringstream os;
  os << "(" << r << ", " << c << ")";
  return os.str();
}

void check_finite(const Eigen::MatrixXd& m, const std::string& name, Violations& out) {
  if (m.allFinite()) return;
  for (Index c = 0; c < m.cols(); ++c)
    for (Index r = 0; r < m.rows(); ++r)
      if (!std::isfinite(m(r, c))) out.push_back({"non-finite value in " + name, cell(r, c)});
}

}  // namespace

int SeriesGeometry::run_of(Index t) const {
  for (std::size_t r = 0; r < runs.size(); ++r)
    if (runs[r].contains(t)) return static_cast<int>(r);
  return -1;
}

Violations validate_runs(const std::vector<TrRange>& runs, Index n) {
  Violations out;
  if (runs.size() < 2) out.push_back({"fewer than 2 runs", std::to_string(runs.size()) + " runs"});
  for (std::size_t r = 0; r < runs.size(); ++r) {
    if (runs[r].end <= runs[r].begin) out.push_back({"empty run", "run " + std::to_string(r)});
    if (r > 0) {
      if (runs[r].begin < runs[r - 1].end)
        out.push_back({"overlapping runs", "runs " + std::to_string(r - 1) + " and " + std::to_string(r)});
      else if (runs[r].begin > runs[r - 1].end)
        out.push_back({"gap between runs", "before run " + std::to_string(r)});
    }
  }
  if (!runs.empty() && (runs.front().begin != 0 || runs.back().end != n))
    out.push_back({"runs do not cover series", "n = " + std::to_string(n)});
  return out;
}

Violations validate(const FeatureMatrix& x) {
  Violations out;
  if (x.rows() < 1) out.push_back({"feature matrix has no rows", ""});
  if (x.cols() < 1) out.push_back({"feature matrix has no columns", ""});
  if (x.meta.sequence_length < 1)
    out.push_back({"sequence length must be >= 1", std::to_string(x.meta.sequence_length)});
  check_finite(x.values, "feature matrix", out);
  return out;
}

Violations validate(const VoxelSeries& y) {
  Violations out = validate_runs(y.runs, y.n());
  if (y.voxels() < 1) out.push_back({"voxel series has no voxels", ""});
  if (!(y.tr_seconds > 0)) out.push_back({"tr_seconds must be positive", ""});
  check_finite(y.values, "voxel series", out);
  return out;
}

Violations validate(const WordTiming& timing) {
  Violations out;
  if (timing.onsets.size() != timing.run_of_word.size())
    out.push_back({"onsets and run_of_word differ in length", ""});
  if (!(timing.word_interval > 0)) out.push_back({"word interval must be positive", ""});
  const std::size_t n = std::min(timing.onsets.size(), timing.run_of_word.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (timing.run_of_word[i] < 0)
      out.push_back({"word not assigned to a run", "word " + std::to_string(i)});
    if (!std::isfinite(timing.onsets[i]) || timing.onsets[i] < 0)
      out.push_back({"invalid onset", "word " + std::to_string(i)});
    if (i > 0 && timing.run_of_word[i] == timing.run_of_word[i - 1] &&
        !(timing.onsets[i] > timing.onsets[i - 1]))
      out.push_back({"onsets not strictly increasing within run", "word " + std::to_string(i)});
    if (i > 0 && timing.run_of_word[i] < timing.run_of_word[i - 1])
      out.push_back({"words out of run order", "word " + std::to_string(i)});
  }
  return out;
}

Violations validate(const DesignMatrix& d) {
  Violations out;
  if (d.cols() != static_cast<Index>(d.lag_count) * d.components)
    out.push_back({"design columns != lag_count * components", std::to_string(d.cols())});
  check_finite(d.values, "design matrix", out);
  return out;
}

Violations validate(const FoldPlan& plan, const SeriesGeometry& geometry) {
  Violations out;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    const auto& fold = plan.folds[f];
    const std::string where = "fold " + std::to_string(f);
    std::set<Index> train(fold.train.begin(), fold.train.end());
    std::set<int> test_runs;
    for (Index t : fold.test) {
      if (train.count(t)) out.push_back({"train and test overlap", where + ", TR " + std::to_string(t)});
      test_runs.insert(geometry.run_of(t));
    }
    if (test_runs.size() > 1) out.push_back({"test indices span several runs", where});
    if (test_runs.count(-1)) out.push_back({"test index outside every run", where});
    if (fold.test_run >= 0 && static_cast<std::size_t>(fold.test_run) < geometry.runs.size()) {
      const TrRange run = geometry.runs[fold.test_run];
      for (Index t = run.begin; t < run.begin + plan.trim && t < run.end; ++t)
        if (train.count(t) || std::count(fold.test.begin(), fold.test.end(), t))
          out.push_back({"trimmed TR in use", where + ", TR " + std::to_string(t)});
      for (Index t = std::max(run.begin, run.end - plan.trim); t < run.end; ++t)
        if (train.count(t) || std::count(fold.test.begin(), fold.test.end(), t))
          out.push_back({"trimmed TR in use", where + ", TR " + std::to_string(t)});
    }
  }
  return out;
}

Violations validate(const DiscourseLabels& labels) {
  Violations out;
  for (const auto& [name, v] : labels.features) {
    if (name.empty()) out.push_back({"empty feature name", ""});
    if (static_cast<Index>(v.size()) != labels.words)
      out.push_back({"label vector length != word count", name});
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i] > 1) out.push_back({"label not in {0,1}", name + ", word " + std::to_string(i)});
  }
  return out;
}

Violations validate(const RoiMaskSet& masks) {
  Violations out;
  for (const auto& [name, m] : masks.masks) {
    if (name.empty()) out.push_back({"empty ROI name", ""});
    if (static_cast<Index>(m.size()) != masks.voxels) out.push_back({"mask length != voxel count", name});
  }
  return out;
}

Violations validate(const ResultRecord& record) {
  Violations out;
  if (!(record.acc_20v20 >= 0.0 && record.acc_20v20 <= 1.0))
    out.push_back({"20v20 accuracy outside [0,1]", std::to_string(record.acc_20v20)});
  for (Index j = 0; j < record.pearson.size(); ++j)
    if (!(std::abs(record.pearson(j)) <= 1.0 + 1e-12))
      out.push_back({"pearson outside [-1,1]", "voxel " + std::to_string(j)});
  if (record.lambda_chosen.size() != 0 && record.lambda_chosen.size() != record.pearson.size())
    out.push_back({"lambda vector length != voxel count", ""});
  return out;
}

void throw_if_invalid(const Violations& v, const std::string& context) {
  if (v.empty()) return;
  std::ostringstream os;
  os << context << ": ";
  for (std::size_t i = 0; i < v.size() && i < 8; ++i) {
    if (i) os << "; ";
    os << v[i].what;
    if (!v[i].where.empty()) os << " at " << v[i].where;
  }
  if (v.size() > 8) os << "; ... (" << v.size() << " violations)";
  throw Error(os.str());
}

}  // namespace voxalign
