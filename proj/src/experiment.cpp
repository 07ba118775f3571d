#include "voxalign/experiment.hpp"

#include "voxalign/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace voxalign {

using nlohmann::json;

namespace {

std::string num(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string safe_name(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  return out.empty() ? "_" : out;
}

std::uint64_t text_key(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) s.replace(pos, from.size(), to);
  return s;
}

std::vector<int> int_list(const json& j, const std::string& what) {
  if (!j.is_array()) throw Error("config: " + what + " must be an array of integers");
  std::vector<int> out;
  for (const auto& v : j) out.push_back(v.get<int>());
  return out;
}

std::vector<int> parse_seqlens(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "fig1_grid") return fig1_grid();
    if (s == "fig3_grid") return fig3_grid();
    throw Error("config: unknown sequence-length preset '" + s + "'");
  }
  return int_list(j, "seqlens");
}

LabelRule parse_rule(const std::string& s) {
  if (s == "any") return LabelRule::any;
  if (s == "majority") return LabelRule::majority;
  throw Error("config: unknown label rule '" + s + "'");
}

EncoderConfig parse_encoder(const json& j) {
  EncoderConfig e;
  e.trim = j.value("trim", e.trim);
  if (j.contains("lambda_grid")) {
    const auto& g = j.at("lambda_grid");
    if (g.is_array()) {
      e.lambda_grid.clear();
      for (const auto& v : g) e.lambda_grid.push_back(v.get<double>());
    } else {
      e.lambda_grid = log_grid(g.value("min", 1e-3), g.value("max", 1e6), g.value("count", 10));
    }
  }
  const auto crit = j.value("criterion", std::string("r2"));
  if (crit == "r2") e.criterion = SelectionCriterion::r2;
  else if (crit == "pearson") e.criterion = SelectionCriterion::pearson;
  else throw Error("config: unknown selection criterion '" + crit + "'");
  if (e.lambda_grid.empty()) throw Error("config: lambda grid must not be empty");
  return e;
}

Eigen::MatrixXd lambda_matrix(const CvResult& cv) {
  Eigen::MatrixXd m(static_cast<Index>(cv.folds.size()), cv.predicted.cols());
  for (std::size_t f = 0; f < cv.folds.size(); ++f) m.row(static_cast<Index>(f)) = cv.folds[f].ridge.lambda.transpose();
  return m;
}

// Per-fold records from predictions in original units.
std::vector<ResultRecord> score_predictions(const Eigen::MatrixXd& predicted, const VoxelSeries& series,
                                            const FoldPlan& plan, const Eigen::MatrixXd& lambdas, const CellKey& key,
                                            const TwentyVTwentyConfig& metric, const std::vector<bool>* mask) {
  const SeriesGeometry geometry = SeriesGeometry::of(series);
  const Eigen::MatrixXd pred_all = mask ? mask_columns(predicted, *mask) : predicted;
  const Eigen::MatrixXd truth_all = mask ? mask_columns(series.values, *mask) : series.values;
  const Eigen::MatrixXd lam = mask ? mask_columns(lambdas, *mask) : lambdas;
  std::vector<ResultRecord> out;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    const Fold& fold = plan.folds[f];
    const auto ys = standardize_fit(truth_all, std::span<const Index>(fold.train));
    FoldBlocks blocks{ys.apply(take_rows(pred_all, std::span<const Index>(fold.test))),
                      ys.apply(take_rows(truth_all, std::span<const Index>(fold.test))), fold.test};
    ResultRecord r;
    r.key = {key.model, key.layer, key.seqlen, key.subject, static_cast<int>(f)};
    r.pearson = pearson_per_voxel(blocks.pred, blocks.truth).r;
    r.acc_20v20 = twenty_v_twenty_fold(blocks, geometry, metric, static_cast<int>(f));
    r.lambda_chosen = lam.row(static_cast<Index>(f)).transpose();
    out.push_back(std::move(r));
  }
  return out;
}

std::string cell_label(const CellKey& k) {
  return k.model + " layer " + std::to_string(k.layer) + " seqlen " + std::to_string(k.seqlen) + " subject " + k.subject;
}

json cell_json(const CellKey& k) {
  return {{"model", k.model}, {"layer", k.layer}, {"seqlen", k.seqlen}, {"subject", k.subject}};
}

struct SubjectData {
  std::optional<VoxelSeries> series;
  std::string error;
};

std::map<std::string, SubjectData> load_subjects(const ExperimentConfig& cfg) {
  std::map<std::string, SubjectData> out;
  for (const auto& s : cfg.subjects) {
    SubjectData d;
    try {
      d.series = load_voxel_series(cfg.resolve(s.series), cfg.resolve(s.runs));
      d.series->subject = s.id;
    } catch (const std::exception& e) {
      d.error = e.what();
    }
    out[s.id] = std::move(d);
  }
  return out;
}

}  // namespace

const std::vector<int>& fig1_grid() {
  static const std::vector<int> g = {1, 5, 20, 100, 200, 300, 400, 500, 700, 1000};
  return g;
}

const std::vector<int>& fig3_grid() {
  static const std::vector<int> g = {20, 100, 200, 300, 400, 500};
  return g;
}

std::vector<int> evenly_spread_layers(int depth, int count) {
  if (depth < 1 || count < 1) throw Error("evenly_spread_layers: depth and count must be >= 1");
  if (count == 8 && depth == 12) return {1, 2, 4, 6, 8, 10, 11, 12};
  if (count == 8 && depth == 32) return {2, 6, 10, 14, 18, 24, 28, 32};
  if (count >= depth) {
    std::vector<int> all(static_cast<std::size_t>(depth));
    for (int i = 0; i < depth; ++i) all[i] = i + 1;
    return all;
  }
  std::vector<int> out;
  for (int i = 0; i < count; ++i) {
    const int layer = 1 + static_cast<int>(std::lround(static_cast<double>(i) * (depth - 1) / (count - 1)));
    if (out.empty() || out.back() != layer) out.push_back(layer);
  }
  return out;
}

fs::path ExperimentConfig::feature_path(const std::string& model, int layer, int seqlen) const {
  std::string p = replace_all(feature_pattern, "{model}", model);
  p = replace_all(p, "{layer}", std::to_string(layer));
  p = replace_all(p, "{seqlen}", std::to_string(seqlen));
  return resolve(p);
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) h = (h ^ c) * 0x100000001b3ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const ExperimentConfig& cfg) { return fnv1a_hex(cfg.document.dump()); }

ExperimentConfig parse_config(json doc, const fs::path& root) {
  if (!doc.is_object()) throw Error("config: top level must be a JSON object");
  ExperimentConfig cfg;
  cfg.root = root;
  cfg.document = doc;
  cfg.seed = doc.value("seed", std::uint64_t{1234});
  cfg.workers = doc.value("workers", 1);
  cfg.feature_pattern = doc.value("feature_pattern", cfg.feature_pattern);
  if (!doc.contains("timing")) throw Error("config: 'timing' is required");
  cfg.timing = doc.at("timing").get<std::string>();
  cfg.labels = doc.value("labels", std::string());
  cfg.rois = doc.value("rois", std::string());
  if (doc.contains("label_features"))
    for (const auto& f : doc.at("label_features")) cfg.label_features.push_back(f.get<std::string>());

  for (const auto& m : doc.value("models", json::array())) {
    ModelSpec spec;
    spec.name = m.at("name").get<std::string>();
    if (m.contains("layers")) {
      const auto& l = m.at("layers");
      spec.layers = l.is_object() ? evenly_spread_layers(l.at("depth").get<int>(), l.value("count", 8))
                                  : int_list(l, "layers");
    } else {
      spec.layers = {0};
    }
    spec.seqlens = m.contains("seqlens") ? parse_seqlens(m.at("seqlens")) : fig1_grid();
    if (m.contains("max_seqlen")) {
      const int cap = m.at("max_seqlen").get<int>();
      std::erase_if(spec.seqlens, [cap](int s) { return s > cap; });
    }
    if (spec.layers.empty() || spec.seqlens.empty())
      throw Error("config: model '" + spec.name + "' has an empty layer or sequence-length grid");
    cfg.models.push_back(std::move(spec));
  }
  if (cfg.models.empty()) throw Error("config: at least one model is required");
  for (const auto& s : doc.value("subjects", json::array()))
    cfg.subjects.push_back({s.at("id").get<std::string>(), s.at("series").get<std::string>(),
                            s.at("runs").get<std::string>()});
  if (cfg.subjects.empty()) throw Error("config: at least one subject is required");
  for (const auto& c : doc.value("contrasts", json::array()))
    cfg.contrasts.push_back({c.value("name", c.at("treatment").get<std::string>() + "-vs-" + c.at("base").get<std::string>()),
                             c.at("base").get<std::string>(), c.at("treatment").get<std::string>()});

  const json pre = doc.value("preprocess", json::object());
  cfg.preprocess.pca_components = pre.value("pca_components", 10);
  cfg.preprocess.lag_count = pre.value("lag_count", 4);
  const auto mode = pre.value("pca_mode", std::string("full"));
  if (mode == "full") cfg.preprocess.pca_mode = PcaMode::full;
  else if (mode == "strict") cfg.preprocess.pca_mode = PcaMode::strict;
  else throw Error("config: unknown pca_mode '" + mode + "'");

  cfg.encoder = parse_encoder(doc.value("encoder", json::object()));

  const json met = doc.value("metric", json::object());
  cfg.metric.block_len = met.value("block_len", Index{20});
  cfg.metric.reps = met.value("reps", Index{1000});
  cfg.metric.seed = met.value("seed", cfg.seed);
  const auto dist = met.value("distance", std::string("euclidean"));
  if (dist == "euclidean") cfg.metric.distance = BlockDistance::euclidean;
  else if (dist == "correlation") cfg.metric.distance = BlockDistance::correlation;
  else throw Error("config: unknown distance '" + dist + "'");
  if (cfg.metric.block_len < 1 || cfg.metric.reps < 1) throw Error("config: block_len and reps must be >= 1");

  const json st = doc.value("stats", json::object());
  cfg.alpha = st.value("alpha", 0.05);
  const auto pairing = st.value("pairing", std::string("subject"));
  if (pairing == "subject") cfg.pairing = Pairing::subject;
  else if (pairing == "subject_fold") cfg.pairing = Pairing::subject_fold;
  else throw Error("config: unknown pairing key '" + pairing + "'");
  cfg.alternative = stats::parse_alternative(st.value("alternative", std::string("greater")));

  const json dis = doc.value("discourse", json::object());
  cfg.discourse.sample_count = dis.value("sample_count", Index{160});
  cfg.discourse.seed = dis.value("seed", cfg.seed);
  cfg.discourse.rule = parse_rule(dis.value("rule", std::string("any")));
  const json bal = doc.value("balanced", json::object());
  cfg.balanced.train_last = bal.value("train_last", Index{500});
  cfg.balanced.test_first = bal.value("test_first", Index{700});
  cfg.balanced.sample_count = bal.value("sample_count", Index{74});
  cfg.balanced.validate_fraction = bal.value("validate_fraction", 0.2);
  cfg.balanced.min_trs = bal.value("min_trs", Index{1200});
  cfg.balanced.seed = bal.value("seed", cfg.seed);
  cfg.balanced.rule = cfg.discourse.rule;
  cfg.balanced.encoder = cfg.encoder;

  const json nc = doc.value("noise_ceiling", json::object());
  cfg.noise_ceiling.reducer_k = nc.value("reducer_k", 40);
  cfg.noise_ceiling.encoder = cfg.encoder;
  cfg.noise_ceiling.metric = cfg.metric;
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error("config " + path.string() + ": " + e.what());
  }
  return parse_config(std::move(doc), path.parent_path());
}

ExperimentConfig with_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  json doc = cfg.document;
  doc["seed"] = seed;
  for (const char* section : {"metric", "discourse", "balanced"})
    if (doc.contains(section)) doc[section].erase("seed");
  return parse_config(std::move(doc), cfg.root);
}

std::vector<CellKey> enumerate_cells(const ExperimentConfig& cfg) {
  std::vector<CellKey> out;
  for (const auto& m : cfg.models)
    for (int layer : m.layers)
      for (int seqlen : m.seqlens)
        for (const auto& s : cfg.subjects) out.push_back({m.name, layer, seqlen, s.id});
  return out;
}

fs::path cell_dir(const fs::path& out, const CellKey& key) {
  return out / "cells" / safe_name(key.model) / ("L" + std::to_string(key.layer) + "_S" + std::to_string(key.seqlen)) /
         safe_name(key.subject);
}

RunSummary run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  const std::string hash = config_hash(cfg);
  const WordTiming timing = load_word_timing(cfg.resolve(cfg.timing));
  const auto subjects = load_subjects(cfg);
  const auto cells = enumerate_cells(cfg);
  fs::create_directories(opts.out);

  struct Outcome {
    bool skipped = false;
    std::vector<ResultRecord> records;
    std::vector<CellFailure> failures;
  };
  std::vector<Outcome> outcomes(cells.size());

  auto process = [&](std::size_t i) {
    const CellKey& key = cells[i];
    Outcome& oc = outcomes[i];
    const fs::path dir = cell_dir(opts.out, key);
    const fs::path marker = dir / "done.json";
    if (!opts.force && fs::exists(marker)) {
      try {
        const json m = json::parse(read_file(marker));
        if (m.value("config_hash", "") == hash && (!opts.score || fs::exists(dir / "records.csv"))) {
          if (opts.score) oc.records = load_results(dir / "records.csv");
          oc.skipped = true;
          return;
        }
      } catch (const std::exception&) {
        // Unreadable marker: recompute the cell.
      }
    }
    std::error_code ec;
    fs::remove(marker, ec);
    int fold_count = 1;
    try {
      const SubjectData& sd = subjects.at(key.subject);
      if (!sd.series) throw Error("subject " + key.subject + ": " + sd.error);
      const VoxelSeries& series = *sd.series;
      const SeriesGeometry geometry = SeriesGeometry::of(series);
      fold_count = static_cast<int>(series.runs.size());
      const FoldPlan plan = make_fold_plan(geometry, cfg.encoder.trim);
      const FeatureMatrix features = load_feature_matrix(cfg.feature_path(key.model, key.layer, key.seqlen));
      std::vector<DesignMatrix> designs;
      if (cfg.preprocess.pca_mode == PcaMode::full) {
        designs.push_back(build_design(features, timing, geometry, cfg.preprocess));
      } else {
        for (const Fold& fold : plan.folds)
          designs.push_back(build_design(features, timing, geometry, cfg.preprocess, std::span<const Index>(fold.train)));
      }
      const CvResult cv = fit_predict_cv(std::span<const DesignMatrix>(designs), series, plan, cfg.encoder);
      const Eigen::MatrixXd lambdas = lambda_matrix(cv);
      write_fmat(dir / "predictions.fmat", from_matrix(cv.predicted, cell_json(key)));
      write_fmat(dir / "lambda.fmat", from_matrix(lambdas, {{"rows", "fold"}}));
      std::string folds = "tr\tfold\n";
      for (std::size_t t = 0; t < cv.fold_of_tr.size(); ++t)
        folds += std::to_string(t) + "\t" + std::to_string(cv.fold_of_tr[t]) + "\n";
      write_file_atomic(dir / "folds.tsv", folds);
      if (opts.score) {
        // Score what eval would read back so both paths agree.
        const Eigen::MatrixXd stored = to_matrix(read_fmat(dir / "predictions.fmat"));
        const Eigen::MatrixXd stored_lambdas = to_matrix(read_fmat(dir / "lambda.fmat"));
        oc.records = score_predictions(stored, series, plan, stored_lambdas, key, cfg.metric, nullptr);
        write_results(oc.records, dir / "records.csv");
        // Sidecars store f32; reread so fresh and reused cells agree bit for bit.
        oc.records = load_results(dir / "records.csv");
      }
      write_file_atomic(marker, json{{"config_hash", hash}, {"cell", cell_json(key)}}.dump(2) + "\n");
    } catch (const std::exception& e) {
      oc.records.clear();
      for (int f = 0; f < fold_count; ++f) oc.failures.push_back({key, f, e.what()});
    }
  };

  const int workers = std::max(1, opts.workers > 0 ? opts.workers : cfg.workers);
  if (workers == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) process(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < cells.size();) process(i);
      });
    for (auto& t : pool) t.join();
  }

  RunSummary summary;
  summary.cells = static_cast<Index>(cells.size());
  json manifest_cells = json::array();
  json manifest_failures = json::array();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    Outcome& oc = outcomes[i];
    if (oc.skipped) ++summary.skipped;
    else if (oc.failures.empty()) ++summary.computed;
    json c = cell_json(cells[i]);
    c["status"] = oc.failures.empty() ? "done" : "failed";
    manifest_cells.push_back(c);
    for (const auto& f : oc.failures) {
      json fj = cell_json(f.cell);
      fj["fold"] = f.fold;
      fj["error"] = f.error;
      manifest_failures.push_back(fj);
      summary.failures.push_back(f);
    }
    for (auto& r : oc.records) summary.records.push_back(std::move(r));
  }
  std::sort(summary.records.begin(), summary.records.end(),
            [](const ResultRecord& a, const ResultRecord& b) { return a.key < b.key; });
  if (opts.score) write_results(summary.records, opts.out / "records.csv");

  json manifest = {{"config_hash", hash},
                   {"toolkit_version", kToolkitVersion},
                   {"config", cfg.document},
                   {"seeds", {{"seed", cfg.seed}, {"metric", cfg.metric.seed}, {"discourse", cfg.discourse.seed}}},
                   {"cells", manifest_cells},
                   {"failures", manifest_failures},
                   {"record_count", summary.records.size()}};
  write_file_atomic(opts.out / "manifest.json", manifest.dump(2) + "\n");
  return summary;
}

std::vector<ResultRecord> evaluate_cells(const ExperimentConfig& cfg, const fs::path& out, const std::string& roi) {
  const auto subjects = load_subjects(cfg);
  std::optional<RoiMaskSet> rois;
  std::vector<ResultRecord> records;
  for (const CellKey& key : enumerate_cells(cfg)) {
    const fs::path dir = cell_dir(out, key);
    if (!fs::exists(dir / "predictions.fmat")) continue;
    const SubjectData& sd = subjects.at(key.subject);
    if (!sd.series) throw Error("subject " + key.subject + ": " + sd.error);
    const VoxelSeries& series = *sd.series;
    const std::vector<bool>* mask = nullptr;
    if (!roi.empty()) {
      if (cfg.rois.empty()) throw Error("eval: an ROI was requested but the config names no ROI file");
      if (!rois) rois = load_roi_masks(cfg.resolve(cfg.rois), series.voxels());
      const auto it = rois->masks.find(roi);
      if (it == rois->masks.end()) throw Error("eval: unknown ROI '" + roi + "'");
      mask = &it->second;
    }
    const Eigen::MatrixXd predicted = to_matrix(read_fmat(dir / "predictions.fmat"));
    const Eigen::MatrixXd lambdas = to_matrix(read_fmat(dir / "lambda.fmat"));
    if (predicted.rows() != series.n() || predicted.cols() != series.voxels())
      throw Error("eval: predictions for " + cell_label(key) + " do not match the series shape");
    const FoldPlan plan = make_fold_plan(SeriesGeometry::of(series), cfg.encoder.trim);
    auto recs = score_predictions(predicted, series, plan, lambdas, key, cfg.metric, mask);
    for (auto& r : recs) records.push_back(std::move(r));
  }
  return records;
}

Index write_designs(const ExperimentConfig& cfg, const fs::path& out) {
  const WordTiming timing = load_word_timing(cfg.resolve(cfg.timing));
  const auto subjects = load_subjects(cfg);
  const SubjectData& first = subjects.at(cfg.subjects.front().id);
  if (!first.series) throw Error("preprocess: " + first.error);
  const SeriesGeometry geometry = SeriesGeometry::of(*first.series);
  PreprocessConfig pc = cfg.preprocess;
  pc.pca_mode = PcaMode::full;
  Index written = 0;
  for (const auto& m : cfg.models)
    for (int layer : m.layers)
      for (int seqlen : m.seqlens) {
        const FeatureMatrix x = load_feature_matrix(cfg.feature_path(m.name, layer, seqlen));
        const DesignMatrix d = build_design(x, timing, geometry, pc);
        write_fmat(out / "design" / safe_name(m.name) / ("L" + std::to_string(layer) + "_S" + std::to_string(seqlen) + ".fmat"),
                   from_matrix(d.values, {{"model", m.name}, {"layer", layer}, {"sequence_length", seqlen},
                                          {"lag_count", d.lag_count}, {"components", d.components}}));
        ++written;
      }
  return written;
}

// Aggregation -----------------------------------------------------------------

Field parse_field(const std::string& s) {
  if (s == "model") return Field::model;
  if (s == "layer") return Field::layer;
  if (s == "seqlen") return Field::seqlen;
  if (s == "subject") return Field::subject;
  if (s == "fold") return Field::fold;
  throw Error("unknown group-by field '" + s + "'");
}

std::string field_name(Field f) {
  switch (f) {
    case Field::model: return "model";
    case Field::layer: return "layer";
    case Field::seqlen: return "seqlen";
    case Field::subject: return "subject";
    case Field::fold: return "fold";
  }
  return "?";
}

std::string field_value(const RecordKey& k, Field f) {
  switch (f) {
    case Field::model: return k.model;
    case Field::layer: return std::to_string(k.layer);
    case Field::seqlen: return std::to_string(k.seqlen);
    case Field::subject: return k.subject;
    case Field::fold: return std::to_string(k.fold);
  }
  return "";
}

namespace {

struct MeanSem {
  double mean = std::nan("");
  double sem = std::nan("");
};

MeanSem mean_sem(const std::vector<double>& v) {
  MeanSem out;
  if (v.empty()) return out;
  // Summing sorted values keeps the result independent of record order.
  std::vector<double> s = v;
  std::sort(s.begin(), s.end());
  double sum = 0.0;
  for (double x : s) sum += x;
  out.mean = sum / static_cast<double>(s.size());
  if (s.size() >= 2) {
    double ss = 0.0;
    for (double x : s) ss += (x - out.mean) * (x - out.mean);
    out.sem = std::sqrt(ss / static_cast<double>(s.size() - 1) / static_cast<double>(s.size()));
  }
  return out;
}

double metric_value(const ResultRecord& r, Metric m) {
  return m == Metric::acc_20v20 ? r.acc_20v20 : (r.pearson.size() ? r.pearson.mean() : std::nan(""));
}

std::string metric_name(Metric m) { return m == Metric::acc_20v20 ? "acc_20v20" : "pearson"; }

std::string pairing_key(const RecordKey& k, Pairing p) {
  return p == Pairing::subject ? k.subject : k.subject + "/" + std::to_string(k.fold);
}

// Mean of the metric per pairing unit for one model, optionally one (layer, seqlen).
std::map<std::string, double> unit_means(const std::vector<ResultRecord>& records, const std::string& model, Metric m,
                                         Pairing p, std::optional<std::pair<int, int>> cell) {
  std::map<std::string, std::vector<double>> acc;
  for (const auto& r : records) {
    if (r.key.model != model) continue;
    if (cell && (r.key.layer != cell->first || r.key.seqlen != cell->second)) continue;
    acc[pairing_key(r.key, p)].push_back(metric_value(r, m));
  }
  std::map<std::string, double> out;
  for (const auto& [k, v] : acc) out[k] = mean_sem(v).mean;
  return out;
}

ContrastRow contrast_row(const std::vector<ResultRecord>& records, const ContrastSpec& c, Metric m,
                         const ExperimentConfig& cfg, std::optional<std::pair<int, int>> cell) {
  const auto base = unit_means(records, c.base, m, cfg.pairing, cell);
  const auto treat = unit_means(records, c.treatment, m, cfg.pairing, cell);
  std::vector<double> a, b;
  for (const auto& [k, v] : treat) {
    const auto it = base.find(k);
    if (it != base.end()) {
      a.push_back(v);
      b.push_back(it->second);
    }
  }
  ContrastRow row;
  row.contrast = c.name;
  row.metric = m;
  if (cell) {
    row.layer = cell->first;
    row.seqlen = cell->second;
  }
  row.samples = static_cast<Index>(a.size());
  row.treatment_mean = mean_sem(a).mean;
  row.base_mean = mean_sem(b).mean;
  if (a.size() >= 2) {
    row.test = stats::paired_ttest(std::span<const double>(a), std::span<const double>(b), cfg.alternative);
  } else {
    row.test.statistic = std::nan("");
    row.test.degenerate = true;
    row.test.alternative = cfg.alternative;
  }
  return row;
}

void adjust_rows(std::vector<ContrastRow>& rows, double alpha) {
  std::vector<double> p;
  for (const auto& r : rows) p.push_back(r.test.p);
  const auto adj = stats::fdr_bh(std::span<const double>(p));
  const auto sig = stats::significant_mask(std::span<const double>(adj), alpha);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].test.p_adj = adj[i];
    rows[i].significant = rows[i].samples >= 2 && sig[i];
  }
}

}  // namespace

std::vector<GroupSummary> aggregate(const std::vector<ResultRecord>& records, const std::vector<Field>& group_by) {
  if (records.empty()) throw Error("aggregate: no records");
  std::map<std::vector<std::string>, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& r : records) {
    std::vector<std::string> key;
    for (Field f : group_by) key.push_back(field_value(r.key, f));
    auto& g = groups[key];
    g.first.push_back(r.acc_20v20);
    g.second.push_back(metric_value(r, Metric::pearson));
  }
  std::vector<GroupSummary> out;
  for (const auto& [key, vals] : groups) {
    if (vals.first.empty()) throw Error("aggregate: empty group");
    GroupSummary g;
    g.key = key;
    g.count = static_cast<Index>(vals.first.size());
    const auto a = mean_sem(vals.first), r = mean_sem(vals.second);
    g.acc_mean = a.mean;
    g.acc_sem = a.sem;
    g.r_mean = r.mean;
    g.r_sem = r.sem;
    out.push_back(std::move(g));
  }
  return out;
}

std::string summary_csv(const std::vector<GroupSummary>& groups, const std::vector<Field>& group_by) {
  std::string out;
  for (Field f : group_by) out += field_name(f) + ",";
  out += "count,acc_20v20_mean,acc_20v20_sem,pearson_mean,pearson_sem\n";
  for (const auto& g : groups) {
    for (const auto& k : g.key) out += k + ",";
    out += std::to_string(g.count) + "," + num(g.acc_mean) + "," + num(g.acc_sem) + "," + num(g.r_mean) + "," +
           num(g.r_sem) + "\n";
  }
  return out;
}

std::vector<ContrastRow> contrast_table(const std::vector<ResultRecord>& records, const ExperimentConfig& cfg) {
  std::vector<ContrastRow> out;
  for (Metric m : {Metric::acc_20v20, Metric::pearson}) {
    std::vector<ContrastRow> rows;
    for (const auto& c : cfg.contrasts) rows.push_back(contrast_row(records, c, m, cfg, std::nullopt));
    adjust_rows(rows, cfg.alpha);
    out.insert(out.end(), rows.begin(), rows.end());
  }
  return out;
}

std::vector<ContrastRow> contrast_grid(const std::vector<ResultRecord>& records, const ExperimentConfig& cfg) {
  std::vector<ContrastRow> out;
  for (const auto& c : cfg.contrasts) {
    std::set<std::pair<int, int>> cells;
    std::set<std::pair<int, int>> base_cells;
    for (const auto& r : records) {
      if (r.key.model == c.treatment) cells.insert({r.key.layer, r.key.seqlen});
      if (r.key.model == c.base) base_cells.insert({r.key.layer, r.key.seqlen});
    }
    for (Metric m : {Metric::acc_20v20, Metric::pearson}) {
      std::vector<ContrastRow> rows;
      for (const auto& cell : cells)
        if (base_cells.count(cell)) rows.push_back(contrast_row(records, c, m, cfg, cell));
      if (rows.empty()) continue;
      adjust_rows(rows, cfg.alpha);
      out.insert(out.end(), rows.begin(), rows.end());
    }
  }
  return out;
}

std::string contrast_csv(const std::vector<ContrastRow>& rows) {
  std::string out = "contrast,metric,layer,seqlen,samples,base_mean,treatment_mean,t,df,p,p_adj,significant\n";
  for (const auto& r : rows) {
    out += r.contrast + "," + metric_name(r.metric) + "," + (r.layer >= 0 ? std::to_string(r.layer) : "") + "," +
           (r.seqlen >= 0 ? std::to_string(r.seqlen) : "") + "," + std::to_string(r.samples) + "," + num(r.base_mean) +
           "," + num(r.treatment_mean) + "," + num(r.test.statistic) + "," + (r.samples >= 2 ? num(r.test.df) : "") +
           "," + (r.samples >= 2 ? num(r.test.p) : "") + "," + (r.samples >= 2 ? num(r.test.p_adj) : "") + "," +
           (r.significant ? "1" : "0") + "\n";
  }
  return out;
}

std::string significance_grid_csv(const std::vector<ContrastRow>& grid, const std::string& contrast, Metric metric) {
  std::set<int> layers, seqlens;
  std::map<std::pair<int, int>, bool> sig;
  for (const auto& r : grid) {
    if (r.contrast != contrast || r.metric != metric) continue;
    layers.insert(r.layer);
    seqlens.insert(r.seqlen);
    sig[{r.layer, r.seqlen}] = r.significant;
  }
  std::string out = "layer";
  for (int s : seqlens) out += "," + std::to_string(s);
  out += "\n";
  for (int l : layers) {
    out += std::to_string(l);
    for (int s : seqlens) {
      const auto it = sig.find({l, s});
      out += "," + std::string(it == sig.end() ? "" : (it->second ? "1" : "0"));
    }
    out += "\n";
  }
  return out;
}

std::vector<VoxelRow> voxel_table(const std::vector<ResultRecord>& records, const VoxelTableOptions& opts) {
  auto matches = [&](const ResultRecord& r, const std::string& model) {
    return r.key.model == model && (opts.subject.empty() || r.key.subject == opts.subject);
  };
  const Pairing pairing = opts.subject.empty() ? opts.pairing : Pairing::subject_fold;
  std::map<std::tuple<int, int, std::string, int>, const ResultRecord*> base;
  if (!opts.base.empty())
    for (const auto& r : records)
      if (matches(r, opts.base)) base[{r.key.layer, r.key.seqlen, r.key.subject, r.key.fold}] = &r;
  // Per unit: matched treatment records and their base counterparts.
  std::map<std::string, std::pair<std::vector<const ResultRecord*>, std::vector<const ResultRecord*>>> units;
  Index v = -1;
  for (const auto& r : records) {
    if (!matches(r, opts.treatment)) continue;
    const ResultRecord* other = nullptr;
    if (!opts.base.empty()) {
      const auto it = base.find({r.key.layer, r.key.seqlen, r.key.subject, r.key.fold});
      if (it == base.end()) continue;
      other = it->second;
    }
    if (v < 0) v = r.pearson.size();
    if (r.pearson.size() != v || (other && other->pearson.size() != v))
      throw Error("voxel table: records disagree in voxel count");
    auto& u = units[pairing_key(r.key, pairing)];
    u.first.push_back(&r);
    if (other) u.second.push_back(other);
  }
  if (units.size() < 2)
    throw Error("voxel table: need at least 2 matching units for '" + opts.treatment + "', found " +
                std::to_string(units.size()));
  const bool paired = !opts.base.empty();
  const std::size_t n = units.size();
  Eigen::MatrixXd a(static_cast<Index>(n), v), b = Eigen::MatrixXd::Zero(static_cast<Index>(n), v);
  std::size_t i = 0;
  for (const auto& [key, u] : units) {
    Eigen::VectorXd sa = Eigen::VectorXd::Zero(v), sb = Eigen::VectorXd::Zero(v);
    for (const auto* r : u.first) sa += r->pearson;
    for (const auto* r : u.second) sb += r->pearson;
    a.row(static_cast<Index>(i)) = sa.transpose() / static_cast<double>(u.first.size());
    if (paired) b.row(static_cast<Index>(i)) = sb.transpose() / static_cast<double>(u.second.size());
    ++i;
  }
  std::vector<VoxelRow> rows(static_cast<std::size_t>(v));
  std::vector<double> p(static_cast<std::size_t>(v)), ca(n), cb(n);
  for (Index j = 0; j < v; ++j) {
    for (std::size_t k = 0; k < n; ++k) {
      ca[k] = a(static_cast<Index>(k), j);
      cb[k] = b(static_cast<Index>(k), j);
    }
    VoxelRow& row = rows[j];
    row.voxel = j;
    row.r_mean = mean_sem(ca).mean;
    const stats::TestOutcome t =
        paired ? stats::paired_ttest(std::span<const double>(ca), std::span<const double>(cb), stats::Alternative::greater)
               : stats::one_sample_ttest(std::span<const double>(ca), 0.0, stats::Alternative::greater);
    if (paired) row.r_diff = t.estimate;
    row.p = t.p;
    p[j] = t.p;
  }
  const auto adj = stats::fdr_bh(std::span<const double>(p));
  const auto sig = stats::significant_mask(std::span<const double>(adj), opts.alpha);
  for (Index j = 0; j < v; ++j) {
    rows[j].p_adj = adj[j];
    rows[j].significant = sig[j];
  }
  return rows;
}

std::string voxel_table_csv(const std::vector<VoxelRow>& rows, const RoiMaskSet* rois) {
  std::string out = "voxel,r_mean,r_diff,p,p_adj,significant";
  if (rois) {
    if (rois->voxels != static_cast<Index>(rows.size())) throw Error("voxel table: ROI masks have a different voxel count");
    for (const auto& [name, m] : rois->masks) out += ",roi_" + name;
  }
  out += "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.voxel) + "," + num(r.r_mean) + "," + num(r.r_diff) + "," + num(r.p) + "," + num(r.p_adj) +
           "," + (r.significant ? "1" : "0");
    if (rois)
      for (const auto& [name, m] : rois->masks) out += m[r.voxel] ? ",1" : ",0";
    out += "\n";
  }
  return out;
}

void write_aggregate(const ExperimentConfig& cfg, const std::vector<ResultRecord>& records, const fs::path& out,
                     const std::vector<Field>& group_by) {
  const fs::path dir = out / "aggregate";
  write_file_atomic(dir / "summary.csv", summary_csv(aggregate(records, group_by), group_by));
  if (cfg.contrasts.empty()) return;
  write_file_atomic(dir / "contrasts.csv", contrast_csv(contrast_table(records, cfg)));
  const auto grid = contrast_grid(records, cfg);
  write_file_atomic(dir / "contrast_grid.csv", contrast_csv(grid));
  for (const auto& c : cfg.contrasts)
    for (Metric m : {Metric::acc_20v20, Metric::pearson})
      write_file_atomic(dir / ("significance_" + safe_name(c.name) + "_" + metric_name(m) + ".csv"),
                        significance_grid_csv(grid, c.name, m));
}

void write_voxel_stats(const ExperimentConfig& cfg, const std::vector<ResultRecord>& records, const fs::path& out) {
  const fs::path dir = out / "stats";
  std::optional<RoiMaskSet> rois;
  std::vector<std::string> subjects = {""};
  for (const auto& s : cfg.subjects) subjects.push_back(s.id);
  auto emit = [&](const std::string& stem, const VoxelTableOptions& opts) {
    std::vector<VoxelRow> rows;
    try {
      rows = voxel_table(records, opts);
    } catch (const Error&) {
      return;  // not enough records for this slice
    }
    if (!cfg.rois.empty() && !rois) rois = load_roi_masks(cfg.resolve(cfg.rois), static_cast<Index>(rows.size()));
    const std::string who = opts.subject.empty() ? "all" : safe_name(opts.subject);
    write_file_atomic(dir / (stem + "_" + who + ".csv"), voxel_table_csv(rows, rois ? &*rois : nullptr));
  };
  for (const auto& subject : subjects) {
    for (const auto& m : cfg.models) emit("voxels_" + safe_name(m.name), {m.name, "", subject, cfg.alpha, cfg.pairing});
    for (const auto& c : cfg.contrasts)
      emit("contrast_" + safe_name(c.name), {c.treatment, c.base, subject, cfg.alpha, cfg.pairing});
  }
}

void write_discourse(const ExperimentConfig& cfg, const fs::path& out, bool balanced) {
  if (cfg.labels.empty()) throw Error("discourse: the config names no labels file");
  const WordTiming timing = load_word_timing(cfg.resolve(cfg.timing));
  const DiscourseLabels labels = load_labels(cfg.resolve(cfg.labels), timing.words(), cfg.label_features);
  const auto subjects = load_subjects(cfg);
  std::string csv = "model,layer,seqlen,subject,feature,labeled,sampled,mean_r\n";
  auto row = [&](const CellKey& k, const std::string& feature, Index labeled, Index sampled, double r) {
    csv += k.model + "," + std::to_string(k.layer) + "," + std::to_string(k.seqlen) + "," + k.subject + "," + feature +
           "," + std::to_string(labeled) + "," + std::to_string(sampled) + "," + num(r) + "\n";
  };
  for (const CellKey& key : enumerate_cells(cfg)) {
    const SubjectData& sd = subjects.at(key.subject);
    if (!sd.series) throw Error("subject " + key.subject + ": " + sd.error);
    const VoxelSeries& series = *sd.series;
    const SeriesGeometry geometry = SeriesGeometry::of(series);
    if (balanced) {
      const FeatureMatrix x = load_feature_matrix(cfg.feature_path(key.model, key.layer, key.seqlen));
      PreprocessConfig pc = cfg.preprocess;
      pc.pca_mode = PcaMode::full;
      const DesignMatrix d = build_design(x, timing, geometry, pc);
      const BalancedReport rep = balanced_protocol(d, series, labels, timing, cfg.balanced);
      for (const auto& f : rep.features)
        row(key, f.feature, f.test_labeled, static_cast<Index>(f.score.trs.size()), f.score.mean);
      row(key, "Random", rep.random_control.test_labeled, static_cast<Index>(rep.random_control.score.trs.size()),
          rep.random_control.score.mean);
      row(key, "Full", rep.test.size(), static_cast<Index>(rep.full.trs.size()), rep.full.mean);
      continue;
    }
    const fs::path dir = cell_dir(out, key);
    if (!fs::exists(dir / "predictions.fmat")) continue;
    const Eigen::MatrixXd predicted = to_matrix(read_fmat(dir / "predictions.fmat"));
    const FoldPlan plan = make_fold_plan(geometry, cfg.encoder.trim);
    std::vector<Index> scorable;
    for (const Fold& f : plan.folds) scorable.insert(scorable.end(), f.test.begin(), f.test.end());
    std::sort(scorable.begin(), scorable.end());
    const TrMasks masks = label_trs(labels, timing, geometry, cfg.discourse.rule);
    const DiscourseReport rep =
        discourse_analysis(predicted, series.values, std::span<const Index>(scorable), masks, cfg.discourse);
    for (const auto& f : rep.features)
      row(key, f.feature, f.labeled, static_cast<Index>(f.score.trs.size()), f.score.mean);
    row(key, "Random", rep.random_control.labeled, static_cast<Index>(rep.random_control.score.trs.size()),
        rep.random_control.score.mean);
    row(key, "Full", rep.full.labeled, static_cast<Index>(rep.full.score.trs.size()), rep.full.score.mean);
  }
  write_file_atomic(out / "discourse" / (balanced ? "balanced.csv" : "discourse.csv"), csv);
}

NoiseCeilingTable write_noise_ceiling(const ExperimentConfig& cfg, const fs::path& out) {
  const auto loaded = load_subjects(cfg);
  std::vector<VoxelSeries> subjects;
  for (const auto& s : cfg.subjects) {
    const SubjectData& sd = loaded.at(s.id);
    if (!sd.series) throw Error("subject " + s.id + ": " + sd.error);
    subjects.push_back(*sd.series);
  }
  if (subjects.size() < 2) throw Error("noise ceiling: need at least 2 subjects");
  const FoldPlan plan = make_fold_plan(SeriesGeometry::of(subjects.front()), cfg.encoder.trim);
  NoiseCeilingTable table = noise_ceiling_all(std::span<const VoxelSeries>(subjects), plan, cfg.noise_ceiling);
  const fs::path dir = out / "noise_ceiling";
  write_file_atomic(dir / "pairs.csv", table.pairs_csv());
  std::string per = "target,ceiling\n";
  for (std::size_t i = 0; i < table.subjects.size(); ++i)
    per += table.subjects[i] + "," + num(table.per_target(static_cast<Index>(i))) + "\n";
  write_file_atomic(dir / "per_target.csv", per);
  write_file_atomic(dir / "report.txt", table.report());
  return table;
}

// Simulation --------------------------------------------------------------------

SynthConfig parse_synth(const json& doc) {
  SynthConfig c = doc.value("preset", std::string()) == "paper" ? paper_geometry() : SynthConfig{};
  c.words = doc.value("words", c.words);
  c.dims = doc.value("dims", c.dims);
  c.runs = doc.value("runs", c.runs);
  c.trs_per_run = doc.value("trs_per_run", c.trs_per_run);
  c.voxels = doc.value("voxels", c.voxels);
  c.noise_sigma = doc.value("noise_sigma", c.noise_sigma);
  c.feature_rank = doc.value("feature_rank", c.feature_rank);
  c.signal_rank = doc.value("signal_rank", c.signal_rank);
  if (doc.contains("lag_profile")) c.lag_profile = doc.at("lag_profile").get<std::vector<double>>();
  c.word_interval = doc.value("word_interval", c.word_interval);
  c.tr_seconds = doc.value("tr_seconds", c.tr_seconds);
  if (doc.contains("feature_trs")) c.feature_trs = doc.at("feature_trs").get<std::map<std::string, Index>>();
  if (doc.contains("feature_snr")) c.feature_snr = doc.at("feature_snr").get<std::map<std::string, double>>();
  c.label_margin = doc.value("label_margin", c.label_margin);
  c.ar1 = doc.value("ar1", c.ar1);
  c.seed = doc.value("seed", c.seed);
  throw_if_invalid(validate(c), "synth config");
  return c;
}

SimulationConfig parse_simulation(const json& doc) {
  SimulationConfig sim;
  sim.synth = parse_synth(doc.value("synth", json::object()));
  sim.subjects = doc.value("subjects", 1);
  if (sim.subjects < 1) throw Error("simulate: subjects must be >= 1");
  for (const auto& m : doc.value("models", json::array())) {
    SimModel sm;
    sm.name = m.at("name").get<std::string>();
    sm.quality = m.value("quality", 0.5);
    if (m.contains("layers")) sm.layers = int_list(m.at("layers"), "layers");
    if (m.contains("seqlens")) sm.seqlens = parse_seqlens(m.at("seqlens"));
    sim.models.push_back(std::move(sm));
  }
  if (sim.models.empty()) sim.models.push_back({"synthetic", 1.0, {1}, {1}});
  for (const auto& c : doc.value("contrasts", json::array()))
    sim.contrasts.push_back({c.value("name", c.at("treatment").get<std::string>() + "-vs-" + c.at("base").get<std::string>()),
                             c.at("base").get<std::string>(), c.at("treatment").get<std::string>()});
  sim.experiment = doc.value("experiment", json::object());
  return sim;
}

fs::path simulate_dataset(const SimulationConfig& sim, const fs::path& out) {
  fs::create_directories(out);
  json subjects = json::array();
  SynthDataset first;
  for (int s = 0; s < sim.subjects; ++s) {
    SynthConfig c = sim.synth;
    c.subject = "S" + std::to_string(s + 1);
    SynthDataset ds = generate(c);
    const std::string id = c.subject;
    write_voxel_series(out / "subjects" / (id + ".fmat"), out / "subjects" / (id + "_runs.tsv"), ds.series);
    write_ground_truth(out / "truth" / id, ds.truth);
    subjects.push_back({{"id", id}, {"series", "subjects/" + id + ".fmat"}, {"runs", "subjects/" + id + "_runs.tsv"}});
    if (s == 0) first = std::move(ds);
  }
  write_word_timing(out / "timing.tsv", first.timing);
  write_labels(out / "labels.tsv", first.labels);

  const std::string pattern = "features/{model}/layer{layer}_len{seqlen}.fmat";
  json models = json::array();
  for (const SimModel& m : sim.models) {
    for (int layer : m.layers)
      for (int seqlen : m.seqlens) {
        // Cells keep a model-dependent share of the latent; longer context keeps more.
        const double keep = m.quality * (0.5 + 0.5 * seqlen / (seqlen + 100.0));
        const double corrupt = std::clamp(1.0 - keep, 0.0, 1.0);
        Rng rng({sim.synth.seed, 7, text_key(m.name), static_cast<std::uint64_t>(layer), static_cast<std::uint64_t>(seqlen)});
        Eigen::MatrixXd z = std::sqrt(1.0 - corrupt) * first.word_latent;
        for (Index c = 0; c < z.cols(); ++c)
          for (Index r = 0; r < z.rows(); ++r) z(r, c) += std::sqrt(corrupt) * rng.normal();
        FeatureMatrix x;
        x.values = z * first.mixing;
        x.meta = {m.name, layer, seqlen};
        ExperimentConfig tmp;
        tmp.root = out;
        tmp.feature_pattern = pattern;
        write_feature_matrix(tmp.feature_path(m.name, layer, seqlen), x);
      }
    models.push_back({{"name", m.name}, {"layers", m.layers}, {"seqlens", m.seqlens}});
  }
  json contrasts = json::array();
  for (const auto& c : sim.contrasts) contrasts.push_back({{"name", c.name}, {"base", c.base}, {"treatment", c.treatment}});
  json label_features = json::array();
  for (const auto& [name, count] : sim.synth.feature_trs) label_features.push_back(name);

  json doc = {{"feature_pattern", pattern}, {"timing", "timing.tsv"},     {"labels", "labels.tsv"},
              {"label_features", label_features}, {"models", models}, {"subjects", subjects},
              {"contrasts", contrasts},   {"seed", sim.synth.seed}};
  doc.merge_patch(sim.experiment);
  const fs::path cfg_path = out / "experiment.json";
  write_file_atomic(cfg_path, doc.dump(2) + "\n");
  return cfg_path;
}

}  // namespace voxalign
