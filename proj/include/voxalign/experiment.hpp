#pragma once

#include "voxalign/datamodel.hpp"
#include "voxalign/discourse.hpp"
#include "voxalign/encoder.hpp"
#include "voxalign/ingest.hpp"
#include "voxalign/metrics.hpp"
#include "voxalign/preprocess.hpp"
#include "voxalign/stats.hpp"
#include "voxalign/synth.hpp"

#include <cmath>
#include <optional>
#include <string>

namespace voxalign {

inline constexpr const char* kToolkitVersion = "voxalign 1.0.0";

struct ModelSpec {
  std::string name;
  std::vector<int> layers;
  std::vector<int> seqlens;
};

struct SubjectSpec {
  std::string id;
  fs::path series;
  fs::path runs;
};

struct ContrastSpec {
  std::string name;
  std::string base;
  std::string treatment;
};

enum class Pairing {
  subject,       // one sample per subject, averaged over layers, lengths and folds
  subject_fold,  // one sample per (subject, fold)
};

struct ExperimentConfig {
  fs::path root;  // relative paths resolve against it
  std::string feature_pattern = "features/{model}/layer{layer}_len{seqlen}.fmat";
  fs::path timing;
  fs::path labels;
  std::vector<std::string> label_features;
  fs::path rois;
  std::vector<ModelSpec> models;
  std::vector<SubjectSpec> subjects;
  std::vector<ContrastSpec> contrasts;
  PreprocessConfig preprocess;
  EncoderConfig encoder;
  TwentyVTwentyConfig metric;
  DiscourseConfig discourse;
  BalancedConfig balanced;
  NoiseCeilingConfig noise_ceiling;
  double alpha = 0.05;
  Pairing pairing = Pairing::subject;
  stats::Alternative alternative = stats::Alternative::greater;
  int workers = 1;
  std::uint64_t seed = 1234;
  nlohmann::json document;  // normalized source document, hashed for the manifest

  fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : root / p; }
  fs::path feature_path(const std::string& model, int layer, int seqlen) const;
};

/// Sequence-length presets: every length up to 1000 words, or 20 to 500.
const std::vector<int>& fig1_grid();
const std::vector<int>& fig3_grid();

/// Eight layers evenly spread over a model of the given depth (fixed
/// selections for 12- and 32-layer models, rounded even spacing otherwise).
std::vector<int> evenly_spread_layers(int depth, int count = 8);

ExperimentConfig parse_config(nlohmann::json doc, const fs::path& root);
ExperimentConfig load_config(const fs::path& path);
/// Replaces the top-level seed and every derived seed.
ExperimentConfig with_seed(const ExperimentConfig& cfg, std::uint64_t seed);
std::string config_hash(const ExperimentConfig& cfg);
std::string fnv1a_hex(const std::string& bytes);

struct CellKey {
  std::string model;
  int layer = 0;
  int seqlen = 0;
  std::string subject;
  auto operator<=>(const CellKey&) const = default;
};

std::vector<CellKey> enumerate_cells(const ExperimentConfig& cfg);
fs::path cell_dir(const fs::path& out, const CellKey& key);

struct RunOptions {
  fs::path out;
  bool force = false;
  int workers = 0;  // 0 uses the config value
  bool score = true;  // false stops after writing predictions
};

struct CellFailure {
  CellKey cell;
  int fold = -1;
  std::string error;
};

struct RunSummary {
  Index cells = 0;
  Index computed = 0;
  Index skipped = 0;
  std::vector<CellFailure> failures;
  std::vector<ResultRecord> records;
  bool ok() const { return failures.empty(); }
};

/// Fits every (model, layer, seqlen, subject) cell and writes per-cell
/// predictions plus one ResultRecord per fold. Cells whose marker carries the
/// current config hash are reused unless forced.
RunSummary run_experiment(const ExperimentConfig& cfg, const RunOptions& opts);

/// Rescores cells already fit by run_experiment, optionally inside one ROI.
std::vector<ResultRecord> evaluate_cells(const ExperimentConfig& cfg, const fs::path& out,
                                         const std::string& roi = "");

/// Writes one design matrix per (model, layer, seqlen) under out/design.
Index write_designs(const ExperimentConfig& cfg, const fs::path& out);

// Aggregation ---------------------------------------------------------------

enum class Field { model, layer, seqlen, subject, fold };
Field parse_field(const std::string& s);
std::string field_name(Field f);
std::string field_value(const RecordKey& k, Field f);

struct GroupSummary {
  std::vector<std::string> key;  // values for the group_by fields
  Index count = 0;
  double acc_mean = 0.0, acc_sem = std::nan("");
  double r_mean = 0.0, r_sem = std::nan("");
};

/// Grouped mean and sem (sem is NaN for single-record groups).
std::vector<GroupSummary> aggregate(const std::vector<ResultRecord>& records, const std::vector<Field>& group_by);
std::string summary_csv(const std::vector<GroupSummary>& groups, const std::vector<Field>& group_by);

enum class Metric { acc_20v20, pearson };

struct ContrastRow {
  std::string contrast;
  Metric metric = Metric::acc_20v20;
  int layer = -1;   // -1 when averaged over layers and lengths
  int seqlen = -1;
  Index samples = 0;
  double base_mean = 0.0, treatment_mean = 0.0;
  stats::TestOutcome test;
  bool significant = false;
};

/// Treatment vs base, averaged over layers and lengths, one row per
/// (contrast, metric); BH across contrasts per metric.
std::vector<ContrastRow> contrast_table(const std::vector<ResultRecord>& records, const ExperimentConfig& cfg);
/// Same test per (layer, seqlen); BH across the grid of each (contrast, metric).
std::vector<ContrastRow> contrast_grid(const std::vector<ResultRecord>& records, const ExperimentConfig& cfg);
std::string contrast_csv(const std::vector<ContrastRow>& rows);
/// Boolean layer x seqlen significance map for one contrast and metric.
std::string significance_grid_csv(const std::vector<ContrastRow>& grid, const std::string& contrast, Metric metric);

struct VoxelTableOptions {
  std::string treatment;
  std::string base;     // empty: one-sample test of r > 0 on the treatment
  std::string subject;  // empty: pool every subject sharing the voxel space
  double alpha = 0.05;
  /// Records are averaged per unit before testing. With one subject selected,
  /// subject pairing falls back to (subject, fold).
  Pairing pairing = Pairing::subject;
};

struct VoxelRow {
  Index voxel = 0;
  double r_mean = 0.0;
  double r_diff = std::nan("");
  double p = 1.0;
  double p_adj = 1.0;
  bool significant = false;
};

std::vector<VoxelRow> voxel_table(const std::vector<ResultRecord>& records, const VoxelTableOptions& opts);
std::string voxel_table_csv(const std::vector<VoxelRow>& rows, const RoiMaskSet* rois);

/// Writes summary, contrast and significance-grid tables under out/aggregate.
void write_aggregate(const ExperimentConfig& cfg, const std::vector<ResultRecord>& records, const fs::path& out,
                     const std::vector<Field>& group_by);

/// Writes per-voxel tables for every contrast (and per model) under out/stats.
void write_voxel_stats(const ExperimentConfig& cfg, const std::vector<ResultRecord>& records, const fs::path& out);

/// Discourse-feature alignment for every fit cell; balanced=true runs the
/// fixed-window protocol instead of the cross-validated predictions.
void write_discourse(const ExperimentConfig& cfg, const fs::path& out, bool balanced);

/// Subject-to-subject 20v20 ceiling table and report.
NoiseCeilingTable write_noise_ceiling(const ExperimentConfig& cfg, const fs::path& out);

// Simulation ----------------------------------------------------------------

struct SimModel {
  std::string name;
  double quality = 0.5;  // share of latent signal kept in its features
  std::vector<int> layers = {1};
  std::vector<int> seqlens = {1};
};

struct SimulationConfig {
  SynthConfig synth;
  int subjects = 1;
  std::vector<SimModel> models;
  std::vector<ContrastSpec> contrasts;
  nlohmann::json experiment = nlohmann::json::object();  // merged into the emitted config
};

SimulationConfig parse_simulation(const nlohmann::json& doc);
SynthConfig parse_synth(const nlohmann::json& doc);

/// Writes a synthetic dataset plus an experiment.json that runs on it.
fs::path simulate_dataset(const SimulationConfig& sim, const fs::path& out);

}  // namespace voxalign
