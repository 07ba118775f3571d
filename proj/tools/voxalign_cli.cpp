#include "voxalign/experiment.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>

using namespace voxalign;

namespace {

struct Common {
  std::string config;
  std::string out;
  bool force = false;
  int workers = 0;
  long long seed = -1;
};

void add_common(CLI::App* app, Common& c, bool config_required = true) {
  auto* opt = app->add_option("--config", c.config, "experiment configuration (JSON)");
  if (config_required) opt->required();
  app->add_option("--out", c.out, "output directory")->required();
  app->add_flag("--force", c.force, "recompute cells that are already done");
  app->add_option("--workers", c.workers, "parallel cells (0 = config value)");
  app->add_option("--seed", c.seed, "override the top-level seed and every derived seed");
}

ExperimentConfig config_of(const Common& c) {
  ExperimentConfig cfg = load_config(c.config);
  return c.seed >= 0 ? with_seed(cfg, static_cast<std::uint64_t>(c.seed)) : cfg;
}

std::vector<ResultRecord> records_of(const Common& c) {
  const fs::path p = fs::path(c.out) / "records.csv";
  if (!fs::exists(p)) throw Error("no records at " + p.string() + "; run fit and eval first");
  return load_results(p);
}

int report(const RunSummary& s) {
  std::printf("cells %lld: computed %lld, reused %lld, failed folds %zu, records %zu\n",
              static_cast<long long>(s.cells), static_cast<long long>(s.computed), static_cast<long long>(s.skipped),
              s.failures.size(), s.records.size());
  for (const auto& f : s.failures)
    std::fprintf(stderr, "failed: %s layer %d seqlen %d subject %s fold %d: %s\n", f.cell.model.c_str(), f.cell.layer,
                 f.cell.seqlen, f.cell.subject.c_str(), f.fold, f.error.c_str());
  return s.ok() ? 0 : 1;
}

std::vector<Field> parse_fields(const std::string& csv) {
  std::vector<Field> out;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    const std::size_t end = std::min(csv.find(',', pos), csv.size());
    if (end > pos) out.push_back(parse_field(csv.substr(pos, end - pos)));
    pos = end + 1;
  }
  if (out.empty()) throw Error("--group-by needs at least one field");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Encoding-model alignment between language-model features and brain recordings"};
  app.set_version_flag("--version", kToolkitVersion);
  app.require_subcommand(1);

  Common c;
  std::string roi, group_by = "model,layer,seqlen";
  bool balanced = false;

  auto* simulate = app.add_subcommand("simulate", "write a synthetic dataset and a matching experiment.json");
  add_common(simulate, c, false);
  auto* preprocess = app.add_subcommand("preprocess", "write the lagged design matrix of every feature cell");
  add_common(preprocess, c);
  auto* fit = app.add_subcommand("fit", "cross-validated ridge fits, predictions per cell");
  add_common(fit, c);
  auto* eval = app.add_subcommand("eval", "score fitted cells (Pearson and 20v20 per fold)");
  add_common(eval, c);
  eval->add_option("--roi", roi, "score only the voxels of this ROI");
  auto* stats_cmd = app.add_subcommand("stats", "per-voxel tests with FDR correction");
  add_common(stats_cmd, c);
  auto* discourse = app.add_subcommand("discourse", "alignment on TRs of each discourse feature");
  add_common(discourse, c);
  discourse->add_flag("--balanced", balanced, "fixed train/test windows with equal samples per feature");
  auto* ceiling = app.add_subcommand("noiseceiling", "subject-to-subject 20v20 ceiling");
  add_common(ceiling, c);
  auto* agg = app.add_subcommand("aggregate", "grouped summaries, contrasts and significance grids");
  add_common(agg, c);
  agg->add_option("--group-by", group_by, "comma-separated fields: model, layer, seqlen, subject, fold");
  auto* run = app.add_subcommand("run", "fit, evaluate, aggregate and test in one pass");
  add_common(run, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    const fs::path out = c.out;
    if (simulate->parsed()) {
      nlohmann::json doc = nlohmann::json::object();
      if (!c.config.empty()) doc = nlohmann::json::parse(read_file(c.config));
      if (c.seed >= 0) doc["synth"]["seed"] = c.seed;
      const fs::path cfg = simulate_dataset(parse_simulation(doc), out);
      std::printf("wrote %s\n", cfg.string().c_str());
      return 0;
    }
    const ExperimentConfig cfg = config_of(c);
    if (preprocess->parsed()) {
      std::printf("wrote %lld design matrices\n", static_cast<long long>(write_designs(cfg, out)));
      return 0;
    }
    if (fit->parsed()) return report(run_experiment(cfg, {out, c.force, c.workers, false}));
    if (eval->parsed()) {
      auto records = evaluate_cells(cfg, out, roi);
      const fs::path dest = roi.empty() ? out / "records.csv" : out / "roi" / (roi + ".records.csv");
      write_results(records, dest);
      std::printf("wrote %zu records to %s\n", records.size(), dest.string().c_str());
      return 0;
    }
    if (stats_cmd->parsed()) {
      const auto records = records_of(c);
      write_voxel_stats(cfg, records, out);
      if (!cfg.contrasts.empty()) write_aggregate(cfg, records, out, parse_fields(group_by));
      return 0;
    }
    if (discourse->parsed()) {
      write_discourse(cfg, out, balanced);
      return 0;
    }
    if (ceiling->parsed()) {
      std::fputs(write_noise_ceiling(cfg, out).report().c_str(), stdout);
      return 0;
    }
    if (agg->parsed()) {
      write_aggregate(cfg, records_of(c), out, parse_fields(group_by));
      return 0;
    }
    if (run->parsed()) {
      const RunSummary s = run_experiment(cfg, {out, c.force, c.workers, true});
      if (!s.records.empty()) {
        write_aggregate(cfg, s.records, out, parse_fields(group_by));
        write_voxel_stats(cfg, s.records, out);
      }
      return report(s);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
