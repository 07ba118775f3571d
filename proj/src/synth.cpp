#include "voxalign/synth.hpp"

#include "voxalign/preprocess.hpp"
#include "voxalign/rng.hpp"

#include <algorithm>
#include <cmath>

namespace voxalign {

namespace {

Eigen::MatrixXd normal_matrix(Rng& rng, Index rows, Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) m(r, c) = rng.normal();
  return m;
}

std::uint64_t text_key(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

// Population z-score per column; constant columns become zero.
void zscore_columns(Eigen::MatrixXd& m) {
  for (Index c = 0; c < m.cols(); ++c) {
    const double mean = m.col(c).mean();
    m.col(c).array() -= mean;
    const double sd = std::sqrt(m.col(c).squaredNorm() / static_cast<double>(m.rows()));
    if (sd > 0) m.col(c) /= sd;
    else m.col(c).setZero();
  }
}

}  // namespace

SynthConfig paper_geometry() {
  SynthConfig cfg;
  cfg.words = 5176;
  cfg.runs = 4;
  cfg.feature_trs = {{"Characters", 236}, {"Emotion", 170}, {"Motion", 165}};
  return cfg;
}

Violations validate(const SynthConfig& cfg) {
  Violations out;
  auto positive = [&](Index v, const char* name) {
    if (v < 1) out.push_back({std::string(name) + " must be >= 1", std::to_string(v)});
  };
  positive(cfg.words, "words");
  positive(cfg.dims, "dims");
  positive(cfg.runs, "runs");
  positive(cfg.voxels, "voxels");
  positive(cfg.feature_rank, "feature_rank");
  if (cfg.trs_per_run < 0) out.push_back({"trs_per_run must be >= 0", ""});
  if (!(cfg.noise_sigma >= 0)) out.push_back({"noise_sigma must be >= 0", ""});
  if (cfg.signal_rank < 0 || cfg.signal_rank > cfg.feature_rank)
    out.push_back({"signal_rank must lie in [0, feature_rank]", std::to_string(cfg.signal_rank)});
  if (cfg.lag_profile.empty()) out.push_back({"lag_profile must not be empty", ""});
  if (!(cfg.word_interval > 0) || !(cfg.tr_seconds > 0)) out.push_back({"timing constants must be positive", ""});
  if (!(std::abs(cfg.ar1) < 1)) out.push_back({"ar1 must lie in (-1, 1)", ""});
  if (cfg.words < cfg.runs) out.push_back({"fewer words than runs", ""});
  for (const auto& [name, snr] : cfg.feature_snr)
    if (!(snr >= 0)) out.push_back({"feature_snr must be >= 0", name});
  return out;
}

std::vector<Index> synth_run_lengths(const SynthConfig& cfg) {
  std::vector<Index> out;
  for (Index r = 0; r < cfg.runs; ++r) {
    const Index words = cfg.words / cfg.runs + (r < cfg.words % cfg.runs ? 1 : 0);
    const double last_onset = static_cast<double>(words - 1) * cfg.word_interval;
    const Index needed = static_cast<Index>(std::floor(last_onset / cfg.tr_seconds + 1e-9)) + 1;
    if (cfg.trs_per_run != 0 && cfg.trs_per_run < needed)
      throw Error("synth: trs_per_run " + std::to_string(cfg.trs_per_run) + " shorter than the stimulus (" +
                  std::to_string(needed) + " TRs)");
    out.push_back(std::max(needed, cfg.trs_per_run));
  }
  return out;
}

SynthDataset generate(const SynthConfig& cfg) {
  throw_if_invalid(validate(cfg), "synth config");
  SynthDataset ds;

  // Timing: words split across runs as evenly as possible, fixed interval.
  const auto run_trs = synth_run_lengths(cfg);
  Index start = 0;
  std::vector<TrRange> runs;
  for (Index r = 0; r < cfg.runs; ++r) {
    runs.push_back({start, start + run_trs[r]});
    start += run_trs[r];
    const Index words = cfg.words / cfg.runs + (r < cfg.words % cfg.runs ? 1 : 0);
    for (Index i = 0; i < words; ++i) {
      ds.timing.onsets.push_back(static_cast<double>(i) * cfg.word_interval);
      ds.timing.run_of_word.push_back(static_cast<int>(r));
    }
  }
  ds.timing.word_interval = cfg.word_interval;
  const SeriesGeometry geometry{start, runs, cfg.tr_seconds};
  const Index n = start;

  // Features: centered low-rank latent mixed into `dims` channels.
  Rng latent_rng({cfg.seed, 1});
  ds.word_latent = normal_matrix(latent_rng, cfg.words, cfg.feature_rank);
  for (Index j = 0; j < cfg.feature_rank; ++j) ds.word_latent.col(j) *= 1.0 / (1.0 + 0.25 * static_cast<double>(j));
  ds.word_latent.rowwise() -= ds.word_latent.colwise().mean();
  Rng mix_rng({cfg.seed, 2});
  ds.mixing = normal_matrix(mix_rng, cfg.feature_rank, cfg.dims) / std::sqrt(static_cast<double>(cfg.dims));
  ds.features.values = ds.word_latent * ds.mixing;
  ds.features.meta = {"synthetic", 0, 1};

  // Response: lagged TR-level latent through known weights, unit signal variance per voxel.
  const int lags = static_cast<int>(cfg.lag_profile.size());
  ds.truth.latent = Eigen::MatrixXd::Zero(n, lags * cfg.signal_rank);
  ds.truth.weights = Eigen::MatrixXd::Zero(lags * cfg.signal_rank, cfg.voxels);
  if (cfg.signal_rank > 0) {
    const Eigen::MatrixXd tr_latent =
        downsample_to_trs(ds.word_latent.leftCols(cfg.signal_rank), ds.timing, geometry);
    ds.truth.latent = build_lagged(tr_latent, geometry, lags).values;
    Rng w_rng({cfg.seed, 3});
    ds.truth.weights = normal_matrix(w_rng, lags * cfg.signal_rank, cfg.voxels);
    for (int l = 0; l < lags; ++l)
      ds.truth.weights.middleRows(l * cfg.signal_rank, cfg.signal_rank) *= cfg.lag_profile[l];
    const Eigen::MatrixXd raw = ds.truth.latent * ds.truth.weights;
    for (Index v = 0; v < cfg.voxels; ++v) {
      const double mean = raw.col(v).mean();
      const double sd = std::sqrt((raw.col(v).array() - mean).square().sum() / static_cast<double>(n));
      if (sd > 0) ds.truth.weights.col(v) /= sd;
    }
  }

  // Discourse labels: disjoint TR sets per feature, one labeled word per chosen TR.
  const auto tr_of_word = word_trs(ds.timing, geometry);
  std::vector<std::vector<Index>> words_of_tr(static_cast<std::size_t>(n));
  for (Index w = 0; w < cfg.words; ++w) words_of_tr[tr_of_word[w]].push_back(w);
  std::vector<bool> eligible(static_cast<std::size_t>(n), false);
  for (const TrRange& run : runs)
    for (Index t = run.begin + cfg.label_margin; t < run.end - cfg.label_margin; ++t)
      eligible[t] = !words_of_tr[t].empty();
  ds.labels.words = cfg.words;
  ds.truth.gains = Eigen::VectorXd::Ones(n);
  Rng label_rng({cfg.seed, 4});
  for (const auto& [name, count] : cfg.feature_trs) {
    std::vector<Index> pool;
    for (Index t = 0; t < n; ++t)
      if (eligible[t]) pool.push_back(t);
    if (static_cast<Index>(pool.size()) < count)
      throw Error("synth: not enough unlabeled TRs for feature '" + name + "'");
    auto& flags = ds.labels.features[name];
    flags.assign(static_cast<std::size_t>(cfg.words), 0);
    const auto snr = cfg.feature_snr.find(name);
    for (Index i = 0; i < count; ++i) {
      const auto j = i + static_cast<Index>(label_rng.below(static_cast<std::uint64_t>(pool.size() - i)));
      std::swap(pool[i], pool[j]);
      const Index t = pool[i];
      eligible[t] = false;
      const auto& ws = words_of_tr[t];
      flags[ws[label_rng.below(ws.size())]] = 1;
      if (snr != cfg.feature_snr.end()) ds.truth.gains(t) = snr->second;
    }
  }

  ds.truth.signal = ds.truth.gains.asDiagonal() * (ds.truth.latent * ds.truth.weights);

  Rng noise_rng({cfg.seed, 5, text_key(cfg.subject)});
  Eigen::MatrixXd noise = normal_matrix(noise_rng, n, cfg.voxels);
  if (cfg.ar1 != 0.0) {
    const double innov = std::sqrt(1.0 - cfg.ar1 * cfg.ar1);
    for (const TrRange& run : runs)
      for (Index t = run.begin + 1; t < run.end; ++t) noise.row(t) = cfg.ar1 * noise.row(t - 1) + innov * noise.row(t);
  }
  ds.series.values = ds.truth.signal + cfg.noise_sigma * noise;
  ds.series.runs = runs;
  ds.series.tr_seconds = cfg.tr_seconds;
  ds.series.subject = cfg.subject;
  return ds;
}

std::vector<VoxelSeries> twin_subjects(const SynthConfig& cfg, int n_subjects, double rho) {
  if (n_subjects < 2) throw Error("twin_subjects: need at least 2 subjects");
  if (!(rho >= 0.0 && rho <= 1.0)) throw Error("twin_subjects: rho must lie in [0, 1]");
  SynthConfig base = cfg;
  base.noise_sigma = 0.0;
  const SynthDataset ds = generate(base);
  Eigen::MatrixXd shared = ds.truth.signal;
  zscore_columns(shared);
  std::vector<VoxelSeries> out;
  for (int s = 0; s < n_subjects; ++s) {
    Rng rng({cfg.seed, 100, static_cast<std::uint64_t>(s)});
    Eigen::MatrixXd priv = normal_matrix(rng, shared.rows(), shared.cols());
    VoxelSeries y = ds.series;
    y.subject = "S" + std::to_string(s + 1);
    y.values = std::sqrt(rho) * shared + std::sqrt(1.0 - rho) * priv;
    zscore_columns(y.values);
    out.push_back(std::move(y));
  }
  return out;
}

void write_ground_truth(const fs::path& dir, const GroundTruth& truth) {
  write_fmat(dir / "latent.fmat", from_matrix(truth.latent, {{"role", "lagged latent"}}));
  write_fmat(dir / "weights.fmat", from_matrix(truth.weights, {{"role", "true weights"}}));
  write_fmat(dir / "gains.fmat", from_matrix(truth.gains, {{"role", "per-TR signal gain"}}));
  write_fmat(dir / "signal.fmat", from_matrix(truth.signal, {{"role", "noiseless series"}}));
}

GroundTruth load_ground_truth(const fs::path& dir) {
  GroundTruth t;
  t.latent = to_matrix(read_fmat(dir / "latent.fmat"));
  t.weights = to_matrix(read_fmat(dir / "weights.fmat"));
  t.gains = to_matrix(read_fmat(dir / "gains.fmat"));
  t.signal = to_matrix(read_fmat(dir / "signal.fmat"));
  return t;
}

}  // namespace voxalign
