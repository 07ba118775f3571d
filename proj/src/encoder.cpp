#include "voxalign/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace voxalign {

std::vector<double> log_grid(double lo, double hi, int count) {
  if (!(lo > 0) || !(hi >= lo) || count < 1) throw Error("log_grid: need 0 < lo <= hi and count >= 1");
  std::vector<double> g(static_cast<std::size_t>(count));
  if (count == 1) return {lo};
  const double a = std::log10(lo), b = std::log10(hi);
  for (int i = 0; i < count; ++i) g[i] = std::pow(10.0, a + (b - a) * i / (count - 1));
  return g;
}

std::vector<double> default_lambda_grid() { return log_grid(1e-3, 1e6, 10); }

FoldPlan make_fold_plan(const SeriesGeometry& geometry, Index trim) {
  throw_if_invalid(validate_runs(geometry.runs, geometry.n), "fold plan");
  if (trim < 0) throw Error("fold plan: trim must be >= 0");
  FoldPlan plan;
  plan.trim = trim;
  for (std::size_t f = 0; f < geometry.runs.size(); ++f) {
    const TrRange run = geometry.runs[f];
    if (run.size() <= 2 * trim)
      throw Error("fold plan: run " + std::to_string(f) + " has " + std::to_string(run.size()) +
                  " TRs, too short for trim " + std::to_string(trim));
    Fold fold;
    fold.test_run = static_cast<int>(f);
    for (Index t = run.begin + trim; t < run.end - trim; ++t) fold.test.push_back(t);
    for (std::size_t r = 0; r < geometry.runs.size(); ++r)
      if (r != f)
        for (Index t = geometry.runs[r].begin; t < geometry.runs[r].end; ++t) fold.train.push_back(t);
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

namespace {

// Column-wise validation score of predictions p against truth y.
// Returns NaN for columns where the truth has no spread.
Eigen::RowVectorXd score_columns(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y, SelectionCriterion criterion) {
  const Eigen::RowVectorXd ymean = y.colwise().mean();
  const Eigen::MatrixXd yc = y.rowwise() - ymean;
  const Eigen::RowVectorXd syy = yc.colwise().squaredNorm();
  Eigen::RowVectorXd out(y.cols());
  if (criterion == SelectionCriterion::r2) {
    const Eigen::RowVectorXd sse = (y - p).colwise().squaredNorm();
    for (Index j = 0; j < y.cols(); ++j) out(j) = syy(j) > 0 ? 1.0 - sse(j) / syy(j) : std::nan("");
  } else {
    const Eigen::MatrixXd pc = p.rowwise() - p.colwise().mean();
    const Eigen::RowVectorXd spp = pc.colwise().squaredNorm();
    const Eigen::RowVectorXd spy = (pc.array() * yc.array()).colwise().sum();
    for (Index j = 0; j < y.cols(); ++j) {
      if (!(syy(j) > 0)) out(j) = std::nan("");
      else if (!(spp(j) > 0)) out(j) = 0.0;
      else out(j) = spy(j) / std::sqrt(spp(j) * syy(j));
    }
  }
  return out;
}

}  // namespace

LambdaSelection select_lambda(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, std::span<const InnerSplit> splits,
                              std::span<const double> grid, SelectionCriterion criterion) {
  if (grid.empty()) throw Error("select_lambda: empty lambda grid");
  for (double g : grid)
    if (!(g > 0)) throw Error("select_lambda: lambda grid values must be positive");
  if (x.rows() != y.rows()) throw Error("select_lambda: design and response rows differ");
  const Index v = y.cols();
  const Index gsize = static_cast<Index>(grid.size());
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(gsize, v);
  Eigen::RowVectorXd count = Eigen::RowVectorXd::Zero(v);

  for (const InnerSplit& split : splits) {
    const Eigen::MatrixXd xin = take_rows(x, std::span<const Index>(split.train));
    const Eigen::MatrixXd yin = take_rows(y, std::span<const Index>(split.train));
    const Eigen::MatrixXd xval = take_rows(x, std::span<const Index>(split.validate));
    const Eigen::MatrixXd yval = take_rows(y, std::span<const Index>(split.validate));
    RidgeSolver<double> solver(xin);
    const Eigen::MatrixXd uty = solver.project(yin);
    const Eigen::MatrixXd xv = xval * solver.v();
    for (Index g = 0; g < gsize; ++g) {
      const Eigen::MatrixXd pred = xv * (solver.shrinkage(grid[g]).asDiagonal() * uty);
      const Eigen::RowVectorXd s = score_columns(pred, yval, criterion);
      for (Index j = 0; j < v; ++j)
        if (std::isfinite(s(j))) {
          sum(g, j) += s(j);
          if (g == 0) count(j) += 1.0;
        }
    }
  }

  LambdaSelection sel;
  sel.scores = Eigen::MatrixXd::Constant(gsize, v, std::nan(""));
  sel.lambda.resize(v);
  sel.degenerate.assign(static_cast<std::size_t>(v), false);
  const double largest = *std::max_element(grid.begin(), grid.end());
  for (Index j = 0; j < v; ++j) {
    if (count(j) == 0) {
      sel.degenerate[j] = true;
      sel.lambda(j) = largest;
      continue;
    }
    sel.scores.col(j) = sum.col(j) / count(j);
    double best = -std::numeric_limits<double>::infinity();
    double chosen = largest;
    bool found = false;
    // Ascending grid order with strict improvement keeps the smallest lambda on ties.
    std::vector<Index> order(static_cast<std::size_t>(gsize));
    for (Index g = 0; g < gsize; ++g) order[g] = g;
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return grid[a] < grid[b]; });
    for (Index g : order) {
      const double s = sel.scores(g, j);
      if (std::isfinite(s) && s > best) {
        best = s;
        chosen = grid[g];
        found = true;
      }
    }
    sel.lambda(j) = chosen;
    sel.degenerate[j] = !found;
  }
  return sel;
}

LambdaSelection select_lambda(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, std::span<const int> run_of_row,
                              std::span<const double> grid, SelectionCriterion criterion) {
  if (static_cast<Index>(run_of_row.size()) != x.rows()) throw Error("select_lambda: one run label per row required");
  std::vector<int> runs(run_of_row.begin(), run_of_row.end());
  std::sort(runs.begin(), runs.end());
  runs.erase(std::unique(runs.begin(), runs.end()), runs.end());
  if (runs.size() < 2) throw Error("select_lambda: nested cross-validation needs >= 2 training runs");
  std::vector<InnerSplit> splits;
  for (int held : runs) {
    InnerSplit s;
    for (Index i = 0; i < x.rows(); ++i) (run_of_row[i] == held ? s.validate : s.train).push_back(i);
    splits.push_back(std::move(s));
  }
  return select_lambda(x, y, std::span<const InnerSplit>(splits), grid, criterion);
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> CvResult::standardized_fold(int f, const Eigen::MatrixXd& truth) const {
  const Fold& fold = plan.folds.at(f);
  const std::span<const Index> rows(fold.test);
  const auto& ys = folds.at(f).y_scaler;
  return {ys.apply(take_rows(predicted, rows)), ys.apply(take_rows(truth, rows))};
}

std::vector<Index> CvResult::scored_trs() const {
  std::vector<Index> out;
  for (std::size_t t = 0; t < fold_of_tr.size(); ++t)
    if (fold_of_tr[t] >= 0) out.push_back(static_cast<Index>(t));
  return out;
}

CvResult fit_predict_cv(std::span<const DesignMatrix> designs, const VoxelSeries& series, const FoldPlan& plan,
                        const EncoderConfig& cfg) {
  if (designs.empty()) throw Error("fit_predict_cv: no design matrix");
  if (designs.size() != 1 && designs.size() != plan.folds.size())
    throw Error("fit_predict_cv: need one design or one per fold");
  for (const auto& d : designs) {
    if (d.rows() != series.n())
      throw Error("fit_predict_cv: design has " + std::to_string(d.rows()) + " rows, series has " +
                  std::to_string(series.n()));
    throw_if_invalid(validate(d), "design matrix");
  }
  const SeriesGeometry geometry = SeriesGeometry::of(series);
  throw_if_invalid(validate(plan, geometry), "fold plan");

  CvResult out;
  out.plan = plan;
  out.predicted = Eigen::MatrixXd::Zero(series.n(), series.voxels());
  out.fold_of_tr.assign(static_cast<std::size_t>(series.n()), -1);

  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    const Fold& fold = plan.folds[f];
    const Eigen::MatrixXd& x = designs[designs.size() == 1 ? 0 : f].values;
    const std::span<const Index> train(fold.train), test(fold.test);

    FoldFit fit;
    fit.x_scaler = standardize_fit(x, train);
    fit.y_scaler = standardize_fit(series.values, train);
    const Eigen::MatrixXd xtr = fit.x_scaler.apply(take_rows(x, train));
    const Eigen::MatrixXd ytr = fit.y_scaler.apply(take_rows(series.values, train));

    std::vector<int> run_of_row(fold.train.size());
    for (std::size_t i = 0; i < fold.train.size(); ++i) run_of_row[i] = geometry.run_of(fold.train[i]);
    const LambdaSelection sel =
        select_lambda(xtr, ytr, std::span<const int>(run_of_row), std::span<const double>(cfg.lambda_grid), cfg.criterion);

    RidgeSolver<double> solver(xtr);
    fit.ridge.weights = solver.weights_from_projection(solver.project(ytr), sel.lambda);
    fit.ridge.lambda = sel.lambda;
    fit.degenerate = sel.degenerate;

    const Eigen::MatrixXd pred = fit.x_scaler.apply(take_rows(x, test)) * fit.ridge.weights;
    const Eigen::MatrixXd pred_units = fit.y_scaler.invert(pred);
    for (std::size_t i = 0; i < fold.test.size(); ++i) {
      out.predicted.row(fold.test[i]) = pred_units.row(static_cast<Index>(i));
      out.fold_of_tr[fold.test[i]] = static_cast<int>(f);
    }
    out.folds.push_back(std::move(fit));
  }
  return out;
}

SplitFit fit_predict_split(const Eigen::MatrixXd& design, const Eigen::MatrixXd& series, std::span<const Index> train,
                           std::span<const Index> test, std::span<const InnerSplit> inner, const EncoderConfig& cfg) {
  if (design.rows() != series.rows()) throw Error("fit_predict_split: design and series rows differ");
  const auto xs = standardize_fit(design, train);
  const auto ys = standardize_fit(series, train);
  const Eigen::MatrixXd xtr = xs.apply(take_rows(design, train));
  const Eigen::MatrixXd ytr = ys.apply(take_rows(series, train));
  SplitFit out;
  out.selection = select_lambda(xtr, ytr, inner, std::span<const double>(cfg.lambda_grid), cfg.criterion);
  RidgeSolver<double> solver(xtr);
  const Eigen::MatrixXd w = solver.weights_from_projection(solver.project(ytr), out.selection.lambda);
  out.predicted = ys.invert(xs.apply(take_rows(design, test)) * w);
  return out;
}

}  // namespace voxalign
