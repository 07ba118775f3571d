#include "testing.hpp"

#include "voxalign/experiment.hpp"

#include <algorithm>
#include <fstream>

using namespace voxalign;
using nlohmann::json;
using testing::TempDir;

namespace {

json sim_doc(int subjects, std::uint64_t seed = 3) {
  return {{"synth", {{"words", 1600}, {"voxels", 12}, {"dims", 16}, {"noise_sigma", 1.0}, {"seed", seed},
                     {"feature_trs", {{"Characters", 40}, {"Motion", 30}}}}},
          {"subjects", subjects},
          {"models",
           {{{"name", "alpha"}, {"quality", 0.4}, {"layers", {1, 2}}, {"seqlens", {5, 50}}},
            {{"name", "beta"}, {"quality", 1.0}, {"layers", {1, 2}}, {"seqlens", {5, 50}}}}},
          {"contrasts", {{{"name", "beta-vs-alpha"}, {"base", "alpha"}, {"treatment", "beta"}}}},
          {"experiment", {{"discourse", {{"sample_count", 20}}}}}};
}

ExperimentConfig simulate(const fs::path& dir, const json& doc) {
  return load_config(simulate_dataset(parse_simulation(doc), dir));
}

std::string slurp(const fs::path& p) { return read_file(p); }

std::vector<std::string> tree(const fs::path& root) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root).string());
  std::sort(out.begin(), out.end());
  return out;
}

ResultRecord record(const std::string& model, int layer, int seqlen, const std::string& subject, int fold, double acc,
                    Eigen::VectorXd r) {
  ResultRecord rec;
  rec.key = {model, layer, seqlen, subject, fold};
  rec.acc_20v20 = acc;
  rec.lambda_chosen = Eigen::VectorXd::Ones(r.size());
  rec.pearson = std::move(r);
  return rec;
}

}  // namespace

TEST_CASE("config defaults and grids") {
  const json doc = {{"timing", "t.tsv"},
                    {"models",
                     {{{"name", "a"}, {"layers", {{"depth", 12}}}},
                      {{"name", "b"}, {"layers", {{"depth", 32}}}, {"seqlens", "fig3_grid"}},
                      {{"name", "c"}, {"layers", {3, 5}}, {"max_seqlen", 500}}}},
                    {"subjects", {{{"id", "S1"}, {"series", "s.fmat"}, {"runs", "r.tsv"}}}}};
  const auto cfg = parse_config(doc, "/data");
  CHECK(cfg.models[0].layers == std::vector<int>{1, 2, 4, 6, 8, 10, 11, 12});
  CHECK(cfg.models[0].seqlens == std::vector<int>{1, 5, 20, 100, 200, 300, 400, 500, 700, 1000});
  CHECK(cfg.models[1].layers == std::vector<int>{2, 6, 10, 14, 18, 24, 28, 32});
  CHECK(cfg.models[1].seqlens == std::vector<int>{20, 100, 200, 300, 400, 500});
  CHECK(cfg.models[2].seqlens == std::vector<int>{1, 5, 20, 100, 200, 300, 400, 500});
  CHECK(cfg.preprocess.pca_components == 10);
  CHECK(cfg.preprocess.lag_count == 4);
  CHECK(cfg.encoder.trim == 10);
  CHECK(cfg.metric.block_len == 20);
  CHECK(cfg.metric.reps == 1000);
  CHECK(cfg.discourse.sample_count == 160);
  CHECK(cfg.balanced.sample_count == 74);
  CHECK(cfg.alpha == 0.05);
  CHECK(cfg.pairing == Pairing::subject);
  CHECK(cfg.feature_path("a", 2, 20) == fs::path("/data/features/a/layer2_len20.fmat"));
  CHECK(enumerate_cells(cfg).size() == 8 * 10 + 8 * 6 + 2 * 8);
}

TEST_CASE("spread layers") {
  CHECK(evenly_spread_layers(24) == std::vector<int>{1, 4, 8, 11, 14, 17, 21, 24});
  CHECK(evenly_spread_layers(4) == std::vector<int>{1, 2, 3, 4});
  CHECK(evenly_spread_layers(12, 3) == std::vector<int>{1, 7, 12});
  CHECK_THROWS_AS(evenly_spread_layers(0), Error);
}

TEST_CASE("config errors") {
  const json ok = {{"timing", "t.tsv"},
                   {"models", {{{"name", "a"}, {"layers", {1}}, {"seqlens", {1}}}}},
                   {"subjects", {{{"id", "S1"}, {"series", "s.fmat"}, {"runs", "r.tsv"}}}}};
  CHECK_NOTHROW(parse_config(ok, "."));
  auto broken = [&](const char* key, json value) {
    json d = ok;
    d[key] = std::move(value);
    return d;
  };
  CHECK_THROWS_AS(parse_config(broken("models", json::array()), "."), Error);
  CHECK_THROWS_AS(parse_config(broken("subjects", json::array()), "."), Error);
  CHECK_THROWS_AS(parse_config(broken("preprocess", {{"pca_mode", "partial"}}), "."), Error);
  CHECK_THROWS_AS(parse_config(broken("stats", {{"pairing", "voxel"}}), "."), Error);
  CHECK_THROWS_AS(parse_config(broken("metric", {{"block_len", 0}}), "."), Error);
  CHECK_THROWS_AS(parse_config(broken("encoder", {{"criterion", "mse"}}), "."), Error);
  CHECK_THROWS_AS(parse_config(broken("models", {{{"name", "a"}, {"seqlens", {700}}, {"max_seqlen", 500}}}), "."),
                  Error);
  json no_timing = ok;
  no_timing.erase("timing");
  CHECK_THROWS_WITH_AS(parse_config(no_timing, "."), doctest::Contains("timing"), Error);
  CHECK_THROWS_AS(parse_config(json::array(), "."), Error);
}

TEST_CASE("seed override reaches every derived seed") {
  const json doc = {{"timing", "t.tsv"},
                    {"seed", 5},
                    {"metric", {{"seed", 9}}},
                    {"models", {{{"name", "a"}, {"layers", {1}}, {"seqlens", {1}}}}},
                    {"subjects", {{{"id", "S1"}, {"series", "s.fmat"}, {"runs", "r.tsv"}}}}};
  const auto cfg = parse_config(doc, ".");
  CHECK(cfg.metric.seed == 9);
  CHECK(cfg.discourse.seed == 5);
  const auto other = with_seed(cfg, 77);
  CHECK(other.seed == 77);
  CHECK(other.metric.seed == 77);
  CHECK(other.discourse.seed == 77);
  CHECK(other.balanced.seed == 77);
  CHECK(config_hash(other) != config_hash(cfg));
  CHECK(config_hash(parse_config(doc, ".")) == config_hash(cfg));
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
}

TEST_CASE("shipped sweep configuration") {
  const auto cfg = load_config(fs::path(VOXALIGN_SOURCE_DIR) / "configs" / "paper.json");
  REQUIRE(cfg.models.size() == 8);
  CHECK(cfg.subjects.size() == 8);
  CHECK(cfg.contrasts.size() == 4);
  for (const auto& m : cfg.models) {
    CHECK(m.layers.size() == 8);
    const bool capped = m.name.rfind("bart", 0) == 0 || m.name.rfind("led", 0) == 0;
    CHECK(m.seqlens.back() == (capped ? 500 : 1000));
    if (m.name.rfind("bigbird", 0) == 0) CHECK(m.layers.back() == 32);
  }
  for (const auto& c : cfg.contrasts) CHECK(c.treatment.find("booksum") != std::string::npos);
  CHECK(cfg.noise_ceiling.reducer_k == 40);
}

TEST_CASE("sweep counts, manifest and idempotence") {
  TempDir data("exp_count_data"), out("exp_count_out");
  const auto cfg = simulate(data.path, sim_doc(1));
  const auto first = run_experiment(cfg, {out.path});
  CHECK(first.cells == 8);
  CHECK(first.computed == 8);
  CHECK(first.records.size() == 32);
  CHECK(first.ok());
  const json manifest = json::parse(slurp(out / "manifest.json"));
  CHECK(manifest["config_hash"] == config_hash(cfg));
  CHECK(manifest["toolkit_version"] == kToolkitVersion);
  CHECK(manifest["record_count"] == 32);
  CHECK(manifest["cells"].size() == 8);
  CHECK(manifest["seeds"]["seed"] == 3);
  const std::string records = slurp(out / "records.csv");
  CHECK(std::count(records.begin(), records.end(), '\n') == 33);

  const auto again = run_experiment(cfg, {out.path});
  CHECK(again.computed == 0);
  CHECK(again.skipped == 8);
  CHECK(slurp(out / "records.csv") == records);
  const auto forced = run_experiment(cfg, {out.path, true});
  CHECK(forced.computed == 8);
  CHECK(slurp(out / "records.csv") == records);

  // A changed config invalidates every cell.
  json doc = cfg.document;
  doc["metric"]["block_len"] = 10;
  const auto changed = run_experiment(parse_config(doc, cfg.root), {out.path});
  CHECK(changed.computed == 8);
  CHECK(slurp(out / "records.csv") != records);
}

TEST_CASE("a corrupt feature file fails its cell only") {
  TempDir data("exp_fault_data"), out("exp_fault_out");
  const auto cfg = simulate(data.path, sim_doc(1));
  const fs::path bad = cfg.feature_path("beta", 2, 50);
  const std::string good = slurp(bad);
  write_file_atomic(bad, good.substr(0, good.size() / 2));
  const auto s = run_experiment(cfg, {out.path});
  CHECK(s.records.size() == 28);
  REQUIRE(s.failures.size() == 4);
  for (const auto& f : s.failures) {
    CHECK(f.cell.model == "beta");
    CHECK(f.cell.layer == 2);
    CHECK(f.cell.seqlen == 50);
  }
  const json manifest = json::parse(slurp(out / "manifest.json"));
  CHECK(manifest["failures"].size() == 4);
  CHECK(manifest["record_count"] == 28);
  write_file_atomic(bad, good);
  const auto fixed = run_experiment(cfg, {out.path});
  CHECK(fixed.computed == 1);
  CHECK(fixed.skipped == 7);
  CHECK(fixed.records.size() == 32);
}

TEST_CASE("a missing subject fails its cells") {
  TempDir data("exp_subject_data"), out("exp_subject_out");
  auto cfg = simulate(data.path, sim_doc(2));
  fs::remove(data / "subjects" / "S2.fmat");
  const auto s = run_experiment(cfg, {out.path});
  CHECK(s.records.size() == 32);
  REQUIRE(s.failures.size() == 8);
  for (const auto& f : s.failures) CHECK(f.cell.subject == "S2");
}

TEST_CASE("worker count does not change outputs") {
  TempDir data("exp_workers_data"), a("exp_workers_a"), b("exp_workers_b");
  const auto cfg = simulate(data.path, sim_doc(2));
  run_experiment(cfg, {a.path, false, 1});
  run_experiment(cfg, {b.path, false, 4});
  const auto files = tree(a.path);
  REQUIRE(files == tree(b.path));
  for (const auto& f : files) CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);
}

TEST_CASE("strict PCA mode runs per fold") {
  TempDir data("exp_strict_data"), out("exp_strict_out");
  auto doc = sim_doc(1);
  doc["experiment"]["preprocess"] = {{"pca_mode", "strict"}};
  const auto cfg = simulate(data.path, doc);
  CHECK(cfg.preprocess.pca_mode == PcaMode::strict);
  const auto s = run_experiment(cfg, {out.path});
  CHECK(s.ok());
  CHECK(s.records.size() == 32);
}

TEST_CASE("evaluation rescoring matches the sweep, ROI restricts voxels") {
  TempDir data("exp_eval_data"), out("exp_eval_out");
  auto cfg = simulate(data.path, sim_doc(1));
  RoiMaskSet rois;
  rois.voxels = 12;
  rois.masks["left"] = std::vector<bool>(12, false);
  for (int v = 0; v < 5; ++v) rois.masks["left"][v] = true;
  write_roi_masks(data / "rois.tsv", rois);
  json doc = cfg.document;
  doc["rois"] = "rois.tsv";
  cfg = parse_config(doc, cfg.root);
  const auto fitted = run_experiment(cfg, {out.path, false, 0, false});
  CHECK(fitted.records.empty());
  CHECK(!fs::exists(out / "records.csv"));
  const auto all = evaluate_cells(cfg, out.path);
  REQUIRE(all.size() == 32);
  const auto swept = run_experiment(cfg, {out.path, true});
  for (std::size_t i = 0; i < all.size(); ++i) {
    CHECK(all[i].key == swept.records[i].key);
    CHECK(all[i].acc_20v20 == swept.records[i].acc_20v20);
    CHECK((all[i].pearson - swept.records[i].pearson).cwiseAbs().maxCoeff() < 1e-6);
  }
  const auto left = evaluate_cells(cfg, out.path, "left");
  REQUIRE(left.size() == 32);
  CHECK(left[0].pearson.size() == 5);
  CHECK((left[0].pearson - all[0].pearson.head(5)).cwiseAbs().maxCoeff() < 1e-6);
  CHECK_THROWS_AS(evaluate_cells(cfg, out.path, "right"), Error);
}

TEST_CASE("design matrices per feature cell") {
  TempDir data("exp_design_data"), out("exp_design_out");
  const auto cfg = simulate(data.path, sim_doc(1));
  CHECK(write_designs(cfg, out.path) == 8);
  const auto m = to_matrix(read_fmat(out / "design" / "beta" / "L2_S50.fmat"));
  CHECK(m.rows() == 400);
  CHECK(m.cols() == 40);
}

TEST_CASE("aggregation") {
  std::vector<ResultRecord> recs;
  for (int s = 0; s < 3; ++s)
    for (int f = 0; f < 4; ++f)
      for (const char* model : {"a", "b"})
        recs.push_back(record(model, 1, 20, "S" + std::to_string(s), f, 0.5 + 0.01 * (s + f),
                              Eigen::VectorXd::Constant(3, 0.1 * s + 0.01 * f)));
  const std::vector<Field> by = {Field::model};
  const auto groups = aggregate(recs, by);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].key == std::vector<std::string>{"a"});
  CHECK(groups[0].count == 12);
  CHECK(groups[0].acc_mean == doctest::Approx(0.5 + 0.01 * 2.5));
  const std::string csv = summary_csv(groups, by);
  CHECK(csv.rfind("model,count,acc_20v20_mean,acc_20v20_sem,pearson_mean,pearson_sem\na,12,", 0) == 0);

  // Any record order gives the same bytes.
  auto shuffled = recs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng({seed});
    for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
    CHECK(summary_csv(aggregate(shuffled, by), by) == csv);
  }

  const std::vector<ResultRecord> one = {recs.front()};
  const auto single = aggregate(one, {Field::model, Field::subject});
  REQUIRE(single.size() == 1);
  CHECK(single[0].acc_mean == recs.front().acc_20v20);
  CHECK(std::isnan(single[0].acc_sem));
  const std::string line = summary_csv(single, {Field::model, Field::subject});
  CHECK(line.find("\na,S0,1,0.5,,0,\n") != std::string::npos);
  CHECK_THROWS_AS(aggregate({}, by), Error);
  CHECK(parse_field("seqlen") == Field::seqlen);
  CHECK_THROWS_AS(parse_field("voxel"), Error);
}

TEST_CASE("contrasts detect a better model and the grid marks its cells") {
  TempDir data("exp_contrast_data"), out("exp_contrast_out");
  const auto cfg = simulate(data.path, sim_doc(4));
  const auto s = run_experiment(cfg, {out.path, false, 4});
  REQUIRE(s.ok());
  const auto table = contrast_table(s.records, cfg);
  REQUIRE(table.size() == 2);
  for (const auto& row : table) {
    CHECK(row.samples == 4);
    CHECK(row.treatment_mean > row.base_mean);
    CHECK(row.significant);
    CHECK(row.test.df == 3);
  }
  const auto grid = contrast_grid(s.records, cfg);
  CHECK(grid.size() == 2 * 4);
  const std::string sig = significance_grid_csv(grid, "beta-vs-alpha", Metric::pearson);
  CHECK(sig.rfind("layer,5,50\n1,", 0) == 0);
  CHECK(std::count(sig.begin(), sig.end(), '\n') == 3);

  write_aggregate(cfg, s.records, out.path, {Field::model, Field::layer, Field::seqlen});
  for (const char* f : {"summary.csv", "contrasts.csv", "contrast_grid.csv", "significance_beta-vs-alpha_acc_20v20.csv",
                        "significance_beta-vs-alpha_pearson.csv"})
    CHECK_MESSAGE(fs::exists(out / "aggregate" / f), f);
  const std::string c = slurp(out / "aggregate" / "contrasts.csv");
  CHECK(c.rfind("contrast,metric,layer,seqlen,samples,base_mean,treatment_mean,t,df,p,p_adj,significant\n", 0) == 0);

  // Swapping the roles gives no significant rows under a one-sided test.
  ExperimentConfig flipped = cfg;
  flipped.contrasts = {{"alpha-vs-beta", "beta", "alpha"}};
  for (const auto& row : contrast_table(s.records, flipped)) CHECK(!row.significant);
}

TEST_CASE("contrast with one pairing unit is degenerate") {
  std::vector<ResultRecord> recs = {record("a", 1, 1, "S1", 0, 0.6, Eigen::VectorXd::Constant(2, 0.1)),
                                    record("b", 1, 1, "S1", 0, 0.7, Eigen::VectorXd::Constant(2, 0.2))};
  ExperimentConfig cfg;
  cfg.contrasts = {{"b-vs-a", "a", "b"}};
  const auto rows = contrast_table(recs, cfg);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].samples == 1);
  CHECK(!rows[0].significant);
  const std::string csv = contrast_csv(rows);
  CHECK(csv.find("b-vs-a,acc_20v20,,,1,0.59999999999999998,0.69999999999999996,,,,,0\n") != std::string::npos);
}

TEST_CASE("voxel tables") {
  std::vector<ResultRecord> recs;
  for (int s = 0; s < 4; ++s)
    for (int f = 0; f < 4; ++f) {
      Eigen::VectorXd r = testing::random_matrix(static_cast<std::uint64_t>(10 * s + f), 6, 1).col(0) * 0.05;
      r(0) += 0.4;
      recs.push_back(record("base", 1, 1, "S" + std::to_string(s), f, 0.5, r));
      recs.push_back(record("book", 1, 1, "S" + std::to_string(s), f, 0.5, r));
    }
  VoxelTableOptions same{"book", "base"};
  const auto rows = voxel_table(recs, same);
  REQUIRE(rows.size() == 6);
  for (const auto& r : rows) {
    CHECK(r.r_diff == 0.0);
    CHECK(!r.significant);
    CHECK(r.p == 1.0);
  }
  VoxelTableOptions one{"book"};
  const auto pos = voxel_table(recs, one);
  CHECK(pos[0].significant);
  CHECK(std::isnan(pos[0].r_diff));
  CHECK(pos[0].r_mean > 0.3);

  one.subject = "S2";
  CHECK(voxel_table(recs, one)[0].significant);  // four folds of one subject

  RoiMaskSet rois;
  rois.voxels = 6;
  rois.masks["IFG"] = {true, false, false, false, false, true};
  const std::string csv = voxel_table_csv(pos, &rois);
  CHECK(csv.rfind("voxel,r_mean,r_diff,p,p_adj,significant,roi_IFG\n0,", 0) == 0);
  CHECK(csv.find(",1,1\n") != std::string::npos);
  rois.voxels = 5;
  CHECK_THROWS_AS(voxel_table_csv(pos, &rois), Error);

  auto mismatch = recs;
  mismatch[1].pearson = Eigen::VectorXd::Zero(5);
  CHECK_THROWS_WITH_AS(voxel_table(mismatch, same), doctest::Contains("voxel count"), Error);
  CHECK_THROWS_AS(voxel_table(recs, VoxelTableOptions{"missing"}), Error);
}

TEST_CASE("planted signal voxels pass the one-sample test") {
  // 10 of 100 voxels carry signal; the rest are independent noise.
  const int reps = 20;
  double power = 0.0, fdp = 0.0;
  for (int rep = 0; rep < reps; ++rep) {
    std::vector<ResultRecord> recs;
    for (int s = 0; s < 6; ++s) {
      auto cfg = testing::small_config(static_cast<std::uint64_t>(100 + rep), 100, 2.0);
      cfg.subject = "S" + std::to_string(s + 1);
      auto ds = generate(cfg);
      Rng rng({static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(s), 42});
      for (Index v = 10; v < 100; ++v)
        for (Index t = 0; t < ds.series.n(); ++t) ds.series.values(t, v) = rng.normal();
      const auto geometry = SeriesGeometry::of(ds.series);
      const auto design = build_design(ds.features, ds.timing, geometry, PreprocessConfig{});
      const auto cv = fit_predict_cv(design, ds.series, make_fold_plan(geometry, 10), EncoderConfig{});
      const auto folds = fold_pearson(cv, ds.series);
      for (int f = 0; f < 4; ++f) recs.push_back(record("m", 1, 1, cfg.subject, f, 0.5, folds[f]));
    }
    const auto rows = voxel_table(recs, VoxelTableOptions{"m"});
    int hits = 0, false_hits = 0;
    for (const auto& r : rows) {
      if (!r.significant) continue;
      if (r.voxel < 10) ++hits;
      else ++false_hits;
    }
    power += hits / 10.0 / reps;
    fdp += (hits + false_hits ? static_cast<double>(false_hits) / (hits + false_hits) : 0.0) / reps;
  }
  CHECK(power > 0.9);
  // BH controls the false discovery rate at alpha * 90 / 100.
  CHECK(fdp <= 0.1);
}

TEST_CASE("discourse tables per cell") {
  TempDir data("exp_discourse_data"), out("exp_discourse_out");
  const auto cfg = simulate(data.path, sim_doc(1));
  REQUIRE(cfg.label_features == std::vector<std::string>{"Characters", "Motion"});
  run_experiment(cfg, {out.path, false, 0, false});
  write_discourse(cfg, out.path, false);
  const std::string csv = slurp(out / "discourse" / "discourse.csv");
  CHECK(csv.rfind("model,layer,seqlen,subject,feature,labeled,sampled,mean_r\n", 0) == 0);
  // Eight cells, two features plus the random and full rows each.
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 8 * 4);
  CHECK(csv.find(",Characters,") != std::string::npos);
  CHECK(csv.find(",Random,320,20,") != std::string::npos);
  CHECK(csv.find(",Full,320,320,") != std::string::npos);
}

TEST_CASE("balanced discourse needs a long series") {
  TempDir data("exp_balanced_data"), out("exp_balanced_out");
  const auto cfg = simulate(data.path, sim_doc(1));
  CHECK_THROWS_WITH_AS(write_discourse(cfg, out.path, true), doctest::Contains("needs at least 1200"), Error);

  TempDir paper("exp_balanced_paper"), pout("exp_balanced_paper_out");
  json doc = {{"synth", {{"preset", "paper"}, {"voxels", 6}, {"dims", 16}}},
              {"models", {{{"name", "m"}, {"quality", 1.0}}}}};
  const auto pcfg = simulate(paper.path, doc);
  write_discourse(pcfg, pout.path, true);
  const std::string csv = slurp(pout / "discourse" / "balanced.csv");
  CHECK(csv.find("m,1,1,S1,Characters,") != std::string::npos);
  CHECK(csv.find(",Full,700,700,") != std::string::npos);
  CHECK(csv.find(",74,") != std::string::npos);
}

TEST_CASE("noise ceiling from configured subjects") {
  TempDir data("exp_ceiling_data"), out("exp_ceiling_out");
  auto doc = sim_doc(3);
  doc["experiment"]["noise_ceiling"] = {{"reducer_k", 5}};
  const auto cfg = simulate(data.path, doc);
  const auto t = write_noise_ceiling(cfg, out.path);
  CHECK(t.subjects.size() == 3);
  CHECK(t.mean > 0.5);
  const std::string report = slurp(out / "noise_ceiling" / "report.txt");
  CHECK(report.find("across 3 targets") != std::string::npos);
  const std::string pairs = slurp(out / "noise_ceiling" / "pairs.csv");
  CHECK(std::count(pairs.begin(), pairs.end(), '\n') == 7);
  CHECK(fs::exists(out / "noise_ceiling" / "per_target.csv"));
}

TEST_CASE("simulation config") {
  const auto sim = parse_simulation(json::object());
  REQUIRE(sim.models.size() == 1);
  CHECK(sim.models[0].name == "synthetic");
  CHECK(sim.subjects == 1);
  const auto paper = parse_synth({{"preset", "paper"}});
  CHECK(paper.words == 5176);
  CHECK(paper.feature_trs.at("Characters") == 236);
  CHECK_THROWS_AS(parse_synth({{"voxels", 0}}), Error);
  CHECK_THROWS_AS(parse_simulation({{"subjects", 0}}), Error);
}

TEST_CASE("better simulated models align better") {
  TempDir data("exp_quality_data"), out("exp_quality_out");
  const auto cfg = simulate(data.path, sim_doc(1));
  const auto s = run_experiment(cfg, {out.path});
  const auto groups = aggregate(s.records, {Field::model, Field::seqlen});
  REQUIRE(groups.size() == 4);
  // alpha/5, alpha/50, beta/5, beta/50
  CHECK(groups[0].r_mean < groups[1].r_mean);
  CHECK(groups[1].r_mean < groups[3].r_mean);
  CHECK(groups[2].r_mean < groups[3].r_mean);
}
