// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.
#include "voxalign/experiment.hpp"
#include "voxalign/ridge.hpp"
#include "voxalign/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <unistd.h>

using namespace voxalign;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Eigen::MatrixXd random_matrix(std::uint64_t seed, Index rows, Index cols) {
  Rng rng({seed, 0xacce77ULL});
  Eigen::MatrixXd m(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) m(r, c) = rng.normal();
  return m;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("voxalign_acceptance_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

struct Fit {
  SynthDataset ds;
  CvResult cv;
  FoldPlan plan;
};

Fit fit(const SynthConfig& cfg) {
  Fit f;
  f.ds = generate(cfg);
  const auto geometry = SeriesGeometry::of(f.ds.series);
  const auto design = build_design(f.ds.features, f.ds.timing, geometry, PreprocessConfig{});
  f.plan = make_fold_plan(geometry, 10);
  f.cv = fit_predict_cv(design, f.ds.series, f.plan, EncoderConfig{});
  return f;
}

// Held-out r per voxel, averaged over folds.
Eigen::VectorXd voxel_r(const Fit& f) {
  const auto folds = fold_pearson(f.cv, f.ds.series);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(folds.front().size());
  for (const auto& v : folds) r += v / static_cast<double>(folds.size());
  return r;
}

Verdict oracle_recovery() {
  SynthConfig cfg = paper_geometry();
  cfg.voxels = 500;
  cfg.noise_sigma = 0.0;
  const auto start = std::chrono::steady_clock::now();
  const Fit f = fit(cfg);
  const double acc = twenty_v_twenty(f.cv, f.ds.series, TwentyVTwentyConfig{}).accuracy;
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double r = voxel_r(f).mean();
  const Index design_cols = f.cv.folds.front().ridge.weights.rows();
  return {f.ds.series.n() == 1296 && design_cols == 40 && r >= 0.99 && acc == 1.0 && seconds < 60.0,
          fmt("n=%lld design=%lld mean r=%.5f 20v20=%.4f time=%.1fs", static_cast<long long>(f.ds.series.n()),
              static_cast<long long>(design_cols), r, acc, seconds)};
}

Verdict null_calibration() {
  SynthConfig cfg = paper_geometry();
  cfg.voxels = 500;
  cfg.signal_rank = 0;
  cfg.seed = 2024;
  const Fit f = fit(cfg);
  TwentyVTwentyConfig metric;
  metric.reps = 1000;
  const double acc = twenty_v_twenty(f.cv, f.ds.series, metric).accuracy;
  const double abs_r = voxel_r(f).cwiseAbs().mean();
  return {acc >= 0.45 && acc <= 0.55 && abs_r <= 0.05, fmt("20v20=%.4f mean |r|=%.4f", acc, abs_r)};
}

Verdict ridge_correctness() {
  double worst = 0.0, worst_grad = 0.0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const Eigen::MatrixXd x = random_matrix(seed, 50, 5);
    const Eigen::MatrixXd y = random_matrix(seed + 5000, 50, 4);
    for (double lambda : log_grid(1e-3, 1e6, 19)) {
      const auto w = ridge_fit(x, y, lambda).weights;
      const Eigen::MatrixXd a = x.transpose() * x + lambda * Eigen::MatrixXd::Identity(5, 5);
      const Eigen::MatrixXd oracle = a.ldlt().solve(x.transpose() * y);
      worst = std::max(worst, (w - oracle).cwiseAbs().maxCoeff());
      const Eigen::MatrixXd grad = x.transpose() * (x * w - y) + lambda * w;
      worst_grad = std::max(worst_grad, grad.norm() / ((x.transpose() * y).norm() + lambda * w.norm()));
    }
  }
  return {worst <= 1e-8 && worst_grad <= 1e-6, fmt("max |W - oracle|=%.2e stationarity=%.2e", worst, worst_grad)};
}

std::vector<bool> step_up(const std::vector<double>& p, double alpha) {
  std::vector<double> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  const double m = static_cast<double>(p.size());
  double cut = -1.0;
  for (std::size_t k = 1; k <= p.size(); ++k)
    if (sorted[k - 1] <= static_cast<double>(k) * alpha / m) cut = sorted[k - 1];
  std::vector<bool> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] <= cut;
  return out;
}

Verdict bh_equivalence() {
  int mismatches = 0, rejections = 0;
  for (std::uint64_t seed = 1; seed <= 1000; ++seed) {
    Rng rng({seed, 77});
    std::vector<double> p(1 + rng.below(12));
    for (auto& v : p) {
      const auto kind = rng.below(3);
      v = kind == 0 ? static_cast<double>(rng.below(41)) / 800.0 : kind == 1 ? 0.02 * rng.uniform() : rng.uniform();
    }
    const auto mask = stats::significant_mask(stats::fdr_bh(p), 0.05);
    if (mask != step_up(p, 0.05)) ++mismatches;
    rejections += static_cast<int>(std::count(mask.begin(), mask.end(), true));
  }
  const auto worked = stats::fdr_bh(std::vector<double>{0.01, 0.02, 0.03, 0.04});
  const bool exact = std::all_of(worked.begin(), worked.end(), [](double v) { return v == 0.04; });
  return {mismatches == 0 && exact,
          fmt("mismatches=%d/1000 rejections=%d worked example exact=%s", mismatches, rejections, exact ? "yes" : "no")};
}

double enumerate_pairs(const FoldBlocks& f, const SeriesGeometry& g, Index len) {
  const auto n = static_cast<Index>(f.trs.size());
  auto contiguous = [&](Index s) {
    if (s + len > n) return false;
    for (Index k = 1; k < len; ++k)
      if (f.trs[s + k] != f.trs[s] + k || g.run_of(f.trs[s + k]) != g.run_of(f.trs[s])) return false;
    return true;
  };
  auto dist = [&](const Eigen::MatrixXd& a, Index ra, const Eigen::MatrixXd& b, Index rb) {
    return (a.middleRows(ra, len) - b.middleRows(rb, len)).norm();
  };
  double total = 0;
  int count = 0;
  for (Index a = 0; a < n; ++a)
    for (Index b = a + len; b < n; ++b) {
      if (!contiguous(a) || !contiguous(b)) continue;
      const double right = dist(f.pred, a, f.truth, a) + dist(f.pred, b, f.truth, b);
      const double swapped = dist(f.pred, a, f.truth, b) + dist(f.pred, b, f.truth, a);
      total += right < swapped ? 1.0 : right == swapped ? 0.5 : 0.0;
      ++count;
    }
  return count ? total / count : std::nan("");
}

Verdict twenty_v_twenty_micro() {
  double worst = 0.0;
  int folds = 0;
  for (std::uint64_t seed = 1; seed <= 500; ++seed) {
    Rng rng({seed, 78});
    const Index rows = 2 + static_cast<Index>(rng.below(5));
    const Index len = 1 + static_cast<Index>(rng.below(2));
    const Index cut = static_cast<Index>(rng.below(4));  // run boundary after this TR
    FoldBlocks f;
    f.pred = random_matrix(seed, rows, 1 + static_cast<Index>(rng.below(4)));
    f.truth = f.pred + random_matrix(seed + 9000, rows, f.pred.cols()) * rng.uniform() * 2.0;
    Index tr = 0;
    for (Index i = 0; i < rows; ++i) {
      f.trs.push_back(tr);
      tr += rng.below(4) == 0 ? 2 : 1;
    }
    const SeriesGeometry g{tr + 1, {{0, cut + 1}, {cut + 1, tr + 1}}, 2.0};
    const double expected = enumerate_pairs(f, g, len);
    if (std::isnan(expected)) continue;
    TwentyVTwentyConfig cfg;
    cfg.block_len = len;
    worst = std::max(worst, std::abs(twenty_v_twenty_fold(f, g, cfg, 0) - expected));
    ++folds;
  }
  return {worst <= 1e-12 && folds > 200, fmt("folds=%d max deviation=%.1e", folds, worst)};
}

Verdict monotonicity() {
  const std::vector<double> sigmas = {0.5, 1.0, 2.0, 4.0};
  std::vector<double> acc(4, 0.0), r(4, 0.0);
  for (std::size_t i = 0; i < sigmas.size(); ++i)
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      SynthConfig cfg;
      cfg.words = 1600;
      cfg.voxels = 1;  // a single voxel keeps 20v20 off its ceiling
      cfg.dims = 32;
      cfg.noise_sigma = sigmas[i];
      cfg.seed = seed;
      const Fit f = fit(cfg);
      acc[i] += twenty_v_twenty(f.cv, f.ds.series, TwentyVTwentyConfig{}).accuracy / 20.0;
      r[i] += voxel_r(f).mean() / 20.0;
    }
  bool ok = true;
  for (std::size_t i = 1; i < sigmas.size(); ++i) ok = ok && acc[i] <= acc[i - 1] && r[i] <= r[i - 1];
  return {ok, fmt("20v20 %.3f %.3f %.3f %.3f, r %.3f %.3f %.3f %.3f", acc[0], acc[1], acc[2], acc[3], r[0], r[1], r[2],
                  r[3])};
}

Verdict discourse_fairness() {
  std::string detail;
  bool ok = true;
  {
    SynthConfig cfg = paper_geometry();
    cfg.voxels = 40;
    const Fit f = fit(cfg);
    const auto geometry = SeriesGeometry::of(f.ds.series);
    std::vector<Index> scorable;
    for (const Fold& fold : f.plan.folds) scorable.insert(scorable.end(), fold.test.begin(), fold.test.end());
    const auto masks = label_trs(f.ds.labels, f.ds.timing, geometry);
    const auto rep = discourse_analysis(f.cv.predicted, f.ds.series.values, scorable, masks, DiscourseConfig{});
    ok = ok && rep.features.size() == 3 && rep.random_control.score.trs.size() == 160;
    for (const auto& feat : rep.features) ok = ok && feat.score.trs.size() == 160;
    detail += fmt("features=%zu at 160 TRs", rep.features.size());
  }
  // Distinct planted gains; the balanced protocol should recover their order.
  const std::map<std::string, double> snr = {{"Characters", 1.0}, {"Emotion", 2.0}, {"Motion", 3.0}};
  int ranked = 0;
  bool split = true;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SynthConfig cfg = paper_geometry();
    cfg.voxels = 30;
    cfg.dims = 32;
    cfg.noise_sigma = 2.0;
    cfg.seed = seed;
    cfg.feature_snr = snr;
    const auto ds = generate(cfg);
    const auto design = build_design(ds.features, ds.timing, SeriesGeometry::of(ds.series), PreprocessConfig{});
    const auto rep = balanced_protocol(design, ds.series, ds.labels, ds.timing, BalancedConfig{});
    split = split && rep.train.end - rep.train.begin == 500 && rep.test.begin == 0 && rep.test.end == 700 &&
            rep.train.end == ds.series.n();
    for (const auto& feat : rep.features) split = split && feat.score.trs.size() == 74;
    auto order = rep.features;
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.score.mean < b.score.mean; });
    bool right = order.size() == 3;
    for (std::size_t i = 1; right && i < order.size(); ++i)
      right = snr.at(order[i - 1].feature) < snr.at(order[i].feature);
    ranked += right;
  }
  ok = ok && split && ranked >= 18;
  detail += fmt("; balanced 500/700 at 74 TRs=%s; SNR order recovered in %d/20 seeds", split ? "yes" : "no", ranked);
  return {ok, detail};
}

SynthConfig twin_config(std::uint64_t seed) {
  SynthConfig c;
  c.words = 5176;
  c.voxels = 8;
  c.dims = 32;
  c.signal_rank = 1;
  c.seed = seed;
  return c;
}

double twin_ceiling(std::uint64_t seed, double rho, int subjects, NoiseCeilingTable* table = nullptr) {
  const auto subs = twin_subjects(twin_config(seed), subjects, rho);
  const auto plan = make_fold_plan(SeriesGeometry::of(subs.front()), 10);
  NoiseCeilingConfig nc;
  nc.reducer_k = 4;
  nc.metric.block_len = 1;
  auto t = noise_ceiling_all(std::span<const VoxelSeries>(subs), plan, nc);
  if (table) *table = t;
  return t.mean;
}

Verdict noise_ceiling_check() {
  const double zero = twin_ceiling(1, 0.0, 4);
  const double one = twin_ceiling(1, 1.0, 4);
  int ordered = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) ordered += twin_ceiling(seed, 0.8, 4) > twin_ceiling(seed, 0.3, 4);
  NoiseCeilingTable eight;
  twin_ceiling(7, 0.3, 8, &eight);
  const std::string report = eight.report();
  const std::string last = report.substr(report.rfind("noise ceiling"));
  const std::string expected = "noise ceiling (20v20): " + format_mean_sem(eight.mean, eight.sem) + " across 8 targets\n";
  const bool layout = last == expected && format_mean_sem(0.61, 0.016) == "0.61 +/- 0.016 (sem)" &&
                      std::count(report.begin(), report.end(), '\n') == 9;
  const bool ok = zero >= 0.45 && zero <= 0.55 && one == 1.0 && ordered == 5 && layout;
  std::string line = last.substr(0, last.size() - 1);
  return {ok, fmt("rho=0 %.4f, rho=1 %.4f, rho 0.8 > 0.3 in %d/5 seeds, report \"%s\"", zero, one, ordered,
                  line.c_str())};
}

std::vector<std::string> tree(const fs::path& root) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root).string());
  std::sort(out.begin(), out.end());
  return out;
}

fs::path full_sweep(const ExperimentConfig& cfg, const fs::path& out, int workers) {
  const RunSummary s = run_experiment(cfg, {out, false, workers, true});
  if (!s.ok()) throw Error("determinism sweep had failures");
  write_aggregate(cfg, s.records, out, {Field::model, Field::layer, Field::seqlen});
  write_voxel_stats(cfg, s.records, out);
  write_discourse(cfg, out, false);
  write_noise_ceiling(cfg, out);
  return out;
}

Verdict determinism() {
  TempDir work("determinism");
  const nlohmann::json doc = {
      {"synth", {{"words", 1600}, {"voxels", 10}, {"dims", 16}, {"seed", 11},
                 {"feature_trs", {{"Characters", 40}, {"Motion", 30}}}}},
      {"subjects", 3},
      {"models",
       {{{"name", "base"}, {"quality", 0.4}, {"layers", {1, 2}}, {"seqlens", {5, 20}}},
        {{"name", "booksum"}, {"quality", 0.8}, {"layers", {1, 2}}, {"seqlens", {5, 20}}}}},
      {"contrasts", {{{"name", "booksum-vs-base"}, {"base", "base"}, {"treatment", "booksum"}}}},
      {"experiment", {{"discourse", {{"sample_count", 20}}}, {"noise_ceiling", {{"reducer_k", 5}}}}}};
  const auto cfg = load_config(simulate_dataset(parse_simulation(doc), work.path / "data"));
  const auto again = load_config(work.path / "data" / "experiment.json");
  const fs::path a = full_sweep(cfg, work.path / "a", 1);
  const fs::path b = full_sweep(again, work.path / "b", 4);
  const auto files = tree(a);
  bool same = config_hash(cfg) == config_hash(again) && files == tree(b);
  int differing = 0;
  for (const auto& f : files)
    if (read_file(a / f) != read_file(b / f)) ++differing;
  same = same && differing == 0;
  return {same, fmt("files=%zu differing=%d (1 vs 4 workers)", files.size(), differing)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"oracle recovery", oracle_recovery},
      {"null calibration", null_calibration},
      {"ridge correctness", ridge_correctness},
      {"BH equivalence", bh_equivalence},
      {"20v20 micro-oracle", twenty_v_twenty_micro},
      {"monotonicity", monotonicity},
      {"discourse fairness", discourse_fairness},
      {"noise ceiling", noise_ceiling_check},
      {"determinism", determinism},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", name, v.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
