#include "voxalign/ingest.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace voxalign {

static_assert(std::endian::native == std::endian::little, "FMAT I/O assumes a little-endian host");

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::vector<std::string>> read_rows(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, '\t')) fields.push_back(field);
    // A leading non-numeric first field marks the header row.
    if (first) {
      first = false;
      const char c = fields.empty() || fields[0].empty() ? 'x' : fields[0][0];
      if (!(std::isdigit(static_cast<unsigned char>(c)) || c == '-')) continue;
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

long long to_int(const std::string& s, const fs::path& path) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    throw Error(path.string() + ": not an integer: '" + s + "'");
  }
  if (pos != s.size()) throw Error(path.string() + ": not an integer: '" + s + "'");
  return v;
}

double to_double(const std::string& s, const fs::path& path) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw Error(path.string() + ": not a number: '" + s + "'");
  }
  if (pos != s.size()) throw Error(path.string() + ": not a number: '" + s + "'");
  return v;
}

void expect_fields(const std::vector<std::string>& row, std::size_t n, const fs::path& path) {
  if (row.size() != n)
    throw Error(path.string() + ": expected " + std::to_string(n) + " tab-separated fields, got " +
                std::to_string(row.size()));
}

std::string record_stem(const RecordKey& k) {
  std::string s = k.model + "_L" + std::to_string(k.layer) + "_S" + std::to_string(k.seqlen) + "_" +
                  k.subject + "_F" + std::to_string(k.fold);
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  return s;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

double median(Eigen::VectorXd v) {
  if (v.size() == 0) return std::nan("");
  std::sort(v.data(), v.data() + v.size());
  const Index m = v.size() / 2;
  return v.size() % 2 ? v(m) : 0.5 * (v(m - 1) + v(m));
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

std::string encode_fmat(const FmatFile& file) {
  if (static_cast<Index>(file.payload.size()) != file.rows * file.cols)
    throw Error("fmat payload size does not match rows x cols");
  nlohmann::json header = {{"dtype", "f32"}, {"order", "row"}, {"rows", file.rows},
                           {"cols", file.cols}, {"meta", file.meta}};
  const std::string h = header.dump();
  std::string out(kFmatMagic, 8);
  const auto len = static_cast<std::uint32_t>(h.size());
  char lenbuf[4];
  std::memcpy(lenbuf, &len, 4);
  out.append(lenbuf, 4);
  out += h;
  out.append(reinterpret_cast<const char*>(file.payload.data()), file.payload.size() * sizeof(float));
  return out;
}

FmatFile decode_fmat(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kFmatMagic, 8) != 0) throw Error("not an fmat file");
  std::uint32_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 4);
  if (bytes.size() < 12 + static_cast<std::size_t>(len)) throw Error("truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad fmat header: ") + e.what());
  }
  if (header.value("dtype", "") != "f32" || header.value("order", "") != "row")
    throw Error("unsupported fmat dtype/order");
  FmatFile f;
  f.rows = header.at("rows").get<Index>();
  f.cols = header.at("cols").get<Index>();
  if (f.rows < 0 || f.cols < 0) throw Error("negative fmat dimensions");
  f.meta = header.value("meta", nlohmann::json::object());
  const std::size_t expected = static_cast<std::size_t>(f.rows) * static_cast<std::size_t>(f.cols) * 4;
  const std::size_t have = bytes.size() - 12 - len;
  if (have < expected) throw Error("truncated payload");
  if (have > expected) throw Error("trailing bytes after payload");
  f.payload.resize(static_cast<std::size_t>(f.rows * f.cols));
  std::memcpy(f.payload.data(), bytes.data() + 12 + len, expected);
  return f;
}

FmatFile read_fmat(const fs::path& path) { return decode_fmat(read_file(path)); }
void write_fmat(const fs::path& path, const FmatFile& file) { write_file_atomic(path, encode_fmat(file)); }

Eigen::MatrixXd to_matrix(const FmatFile& file) {
  using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const RowMajor>(file.payload.data(), file.rows, file.cols).cast<double>();
}

FmatFile from_matrix(const Eigen::MatrixXd& m, nlohmann::json meta) {
  using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  FmatFile f;
  f.rows = m.rows();
  f.cols = m.cols();
  f.meta = std::move(meta);
  f.payload.resize(static_cast<std::size_t>(m.size()));
  Eigen::Map<RowMajor>(f.payload.data(), m.rows(), m.cols()) = m.cast<float>();
  return f;
}

FeatureMatrix load_feature_matrix(const fs::path& path) {
  const FmatFile f = read_fmat(path);
  FeatureMatrix x;
  x.values = to_matrix(f);
  x.meta.model = f.meta.value("model", "");
  x.meta.layer = f.meta.value("layer", 0);
  x.meta.sequence_length = f.meta.value("sequence_length", 1);
  throw_if_invalid(validate(x), path.string());
  return x;
}

void write_feature_matrix(const fs::path& path, const FeatureMatrix& x) {
  write_fmat(path, from_matrix(x.values, {{"model", x.meta.model},
                                          {"layer", x.meta.layer},
                                          {"sequence_length", x.meta.sequence_length}}));
}

std::vector<TrRange> load_run_table(const fs::path& path) {
  std::vector<std::pair<long long, TrRange>> rows;
  for (const auto& row : read_rows(path)) {
    expect_fields(row, 3, path);
    rows.push_back({to_int(row[0], path), TrRange{to_int(row[1], path), to_int(row[2], path)}});
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<TrRange> runs;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].first != static_cast<long long>(i)) throw Error(path.string() + ": run indices must be 0..R-1");
    runs.push_back(rows[i].second);
  }
  return runs;
}

void write_run_table(const fs::path& path, const std::vector<TrRange>& runs) {
  std::string out = "run_index\tstart_tr\tend_tr\n";
  for (std::size_t r = 0; r < runs.size(); ++r)
    out += std::to_string(r) + "\t" + std::to_string(runs[r].begin) + "\t" + std::to_string(runs[r].end) + "\n";
  write_file_atomic(path, out);
}

VoxelSeries load_voxel_series(const fs::path& path, const fs::path& runs_path) {
  const FmatFile f = read_fmat(path);
  VoxelSeries y;
  y.values = to_matrix(f);
  y.tr_seconds = f.meta.value("tr_seconds", 2.0);
  y.subject = f.meta.value("subject", "");
  y.runs = load_run_table(runs_path);
  throw_if_invalid(validate_runs(y.runs, y.n()), runs_path.string());
  throw_if_invalid(validate(y), path.string());
  return y;
}

void write_voxel_series(const fs::path& path, const fs::path& runs_path, const VoxelSeries& y) {
  write_fmat(path, from_matrix(y.values, {{"subject", y.subject}, {"tr_seconds", y.tr_seconds}}));
  write_run_table(runs_path, y.runs);
}

WordTiming load_word_timing(const fs::path& path) {
  struct Row {
    long long word;
    int run;
    double onset;
  };
  std::vector<Row> rows;
  for (const auto& row : read_rows(path)) {
    expect_fields(row, 3, path);
    rows.push_back({to_int(row[0], path), static_cast<int>(to_int(row[1], path)), to_double(row[2], path)});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.word < b.word; });
  WordTiming t;
  double min_step = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].word != static_cast<long long>(i)) throw Error(path.string() + ": word indices must be 0..W-1");
    t.onsets.push_back(rows[i].onset);
    t.run_of_word.push_back(rows[i].run);
    if (i > 0 && rows[i].run == rows[i - 1].run) {
      const double step = rows[i].onset - rows[i - 1].onset;
      if (step <= 0) throw Error(path.string() + ": onset non-monotone in run at word " + std::to_string(i));
      if (min_step == 0.0 || step < min_step) min_step = step;
    }
  }
  if (min_step > 0) t.word_interval = min_step;
  throw_if_invalid(validate(t), path.string());
  return t;
}

void write_word_timing(const fs::path& path, const WordTiming& timing) {
  std::string out = "word_index\trun\tonset_s\n";
  for (Index i = 0; i < timing.words(); ++i)
    out += std::to_string(i) + "\t" + std::to_string(timing.run_of_word[i]) + "\t" +
           format_double(timing.onsets[i]) + "\n";
  write_file_atomic(path, out);
}

DiscourseLabels load_labels(const fs::path& path, Index word_count, const std::vector<std::string>& expected) {
  DiscourseLabels labels;
  labels.words = word_count;
  for (const auto& name : expected) labels.features[name].assign(word_count, 0);
  std::set<std::pair<long long, std::string>> seen;
  for (const auto& row : read_rows(path)) {
    expect_fields(row, 3, path);
    const long long w = to_int(row[0], path);
    const std::string& name = row[1];
    const long long flag = to_int(row[2], path);
    if (w < 0 || w >= word_count) throw Error(path.string() + ": word index out of range: " + row[0]);
    if (flag != 0 && flag != 1) throw Error(path.string() + ": flag must be 0 or 1");
    if (!seen.insert({w, name}).second)
      throw Error(path.string() + ": duplicate (word, feature) row: " + row[0] + ", " + name);
    auto& v = labels.features[name];
    if (v.empty()) v.assign(word_count, 0);
    v[w] = static_cast<std::uint8_t>(flag);
  }
  throw_if_invalid(validate(labels), path.string());
  return labels;
}

void write_labels(const fs::path& path, const DiscourseLabels& labels) {
  std::string out = "word_index\tfeature\tflag\n";
  for (Index w = 0; w < labels.words; ++w)
    for (const auto& [name, v] : labels.features)
      if (v[w]) out += std::to_string(w) + "\t" + name + "\t1\n";
  write_file_atomic(path, out);
}

RoiMaskSet load_roi_masks(const fs::path& path, Index voxel_count) {
  RoiMaskSet masks;
  masks.voxels = voxel_count;
  std::set<std::pair<long long, std::string>> seen;
  for (const auto& row : read_rows(path)) {
    expect_fields(row, 3, path);
    const long long v = to_int(row[0], path);
    const long long flag = to_int(row[2], path);
    if (v < 0 || v >= voxel_count) throw Error(path.string() + ": voxel index out of range: " + row[0]);
    if (flag != 0 && flag != 1) throw Error(path.string() + ": flag must be 0 or 1");
    if (!seen.insert({v, row[1]}).second)
      throw Error(path.string() + ": duplicate (voxel, roi) row: " + row[0] + ", " + row[1]);
    auto& m = masks.masks[row[1]];
    if (m.empty()) m.assign(voxel_count, false);
    m[v] = flag == 1;
  }
  throw_if_invalid(validate(masks), path.string());
  return masks;
}

void write_roi_masks(const fs::path& path, const RoiMaskSet& masks) {
  std::string out = "voxel_index\troi\tflag\n";
  for (Index v = 0; v < masks.voxels; ++v)
    for (const auto& [name, m] : masks.masks)
      if (m[v]) out += std::to_string(v) + "\t" + name + "\t1\n";
  write_file_atomic(path, out);
}

const std::vector<std::string>& results_columns() {
  static const std::vector<std::string> cols = {"model",        "layer",         "seqlen",       "subject",
                                                "fold",         "voxels",        "acc_20v20",    "pearson_mean",
                                                "lambda_median", "pearson_file", "lambda_file"};
  return cols;
}

void write_results(std::vector<ResultRecord> records, const fs::path& csv_path) {
  std::sort(records.begin(), records.end(),
            [](const ResultRecord& a, const ResultRecord& b) { return a.key < b.key; });
  const fs::path dir = csv_path.parent_path();
  const std::string stem = csv_path.stem().string();
  std::string out;
  for (std::size_t c = 0; c < results_columns().size(); ++c) out += (c ? "," : "") + results_columns()[c];
  out += "\n";
  for (const auto& r : records) {
    throw_if_invalid(validate(r), "result record");
    const std::string base = stem + "." + record_stem(r.key);
    const std::string pfile = base + ".pearson.fmat";
    const std::string lfile = base + ".lambda.fmat";
    write_fmat(dir / pfile, from_matrix(r.pearson.transpose()));
    write_fmat(dir / lfile, from_matrix(r.lambda_chosen.transpose()));
    // Mean of the stored f32 values, so reloading and rewriting is a fixed point.
    const double pmean = r.pearson.size() ? r.pearson.cast<float>().cast<double>().mean() : std::nan("");
    out += csv_escape(r.key.model) + "," + std::to_string(r.key.layer) + "," + std::to_string(r.key.seqlen) +
           "," + csv_escape(r.key.subject) + "," + std::to_string(r.key.fold) + "," +
           std::to_string(r.pearson.size()) + "," + format_double(r.acc_20v20) + "," + format_double(pmean) +
           "," + format_double(median(r.lambda_chosen)) + "," + pfile + "," + lfile + "\n";
  }
  write_file_atomic(csv_path, out);
}

std::vector<ResultRecord> load_results(const fs::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw Error("cannot open " + csv_path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(csv_path.string() + ": empty results file");
  if (csv_split(line) != results_columns()) throw Error(csv_path.string() + ": unexpected results header");
  const fs::path dir = csv_path.parent_path();
  std::vector<ResultRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = csv_split(line);
    if (f.size() != results_columns().size()) throw Error(csv_path.string() + ": malformed row");
    ResultRecord r;
    r.key = {f[0], static_cast<int>(to_int(f[1], csv_path)), static_cast<int>(to_int(f[2], csv_path)), f[3],
             static_cast<int>(to_int(f[4], csv_path))};
    r.acc_20v20 = to_double(f[6], csv_path);
    r.pearson = to_matrix(read_fmat(dir / f[9])).transpose();
    r.lambda_chosen = to_matrix(read_fmat(dir / f[10])).transpose();
    if (r.pearson.size() != to_int(f[5], csv_path)) throw Error(csv_path.string() + ": sidecar size mismatch");
    throw_if_invalid(validate(r), csv_path.string());
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace voxalign
