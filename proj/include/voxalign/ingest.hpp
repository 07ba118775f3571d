#pragma once

#include "voxalign/datamodel.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace voxalign {

namespace fs = std::filesystem;

/// Raw FMAT0001 container: magic, u32 LE header length, JSON header,
/// rows*cols little-endian f32 payload in row-major order.
struct FmatFile {
  Index rows = 0;
  Index cols = 0;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<float> payload;  // row-major
};

inline constexpr char kFmatMagic[8] = {'F', 'M', 'A', 'T', '0', '0', '0', '1'};

FmatFile read_fmat(const fs::path& path);
void write_fmat(const fs::path& path, const FmatFile& file);
std::string encode_fmat(const FmatFile& file);
FmatFile decode_fmat(const std::string& bytes);

/// Conversions between the row-major f32 payload and Eigen storage.
Eigen::MatrixXd to_matrix(const FmatFile& file);
FmatFile from_matrix(const Eigen::MatrixXd& m, nlohmann::json meta = nlohmann::json::object());

FeatureMatrix load_feature_matrix(const fs::path& path);
void write_feature_matrix(const fs::path& path, const FeatureMatrix& x);

std::vector<TrRange> load_run_table(const fs::path& path);
void write_run_table(const fs::path& path, const std::vector<TrRange>& runs);

VoxelSeries load_voxel_series(const fs::path& path, const fs::path& runs_path);
void write_voxel_series(const fs::path& path, const fs::path& runs_path, const VoxelSeries& y);

WordTiming load_word_timing(const fs::path& path);
void write_word_timing(const fs::path& path, const WordTiming& timing);

/// Features named in `expected` are present (all zero) even when the file
/// lists none of their words.
DiscourseLabels load_labels(const fs::path& path, Index word_count,
                            const std::vector<std::string>& expected = {});
void write_labels(const fs::path& path, const DiscourseLabels& labels);

RoiMaskSet load_roi_masks(const fs::path& path, Index voxel_count);
void write_roi_masks(const fs::path& path, const RoiMaskSet& masks);

/// Tidy CSV, one row per record, plus FMAT sidecars `<stem>.<key>.pearson.fmat`
/// and `<stem>.<key>.lambda.fmat` next to it. Records are written in key order.
void write_results(std::vector<ResultRecord> records, const fs::path& csv_path);
std::vector<ResultRecord> load_results(const fs::path& csv_path);

/// Column order of the results CSV.
const std::vector<std::string>& results_columns();

/// Writes to a temporary sibling and renames over the target.
void write_file_atomic(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

}  // namespace voxalign
