#pragma once

#include "traplab/core.hpp"
#include "traplab/embedding.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace traplab {

/// Feature matrix with one row per item on disk and one column per item in
/// memory. On disk it is a headerless numeric CSV plus a sidecar index file
/// (same stem, ".index" extension) listing one item id per line.
struct FeatureTable {
  std::vector<std::string> ids;
  MatrixXd features;  // D x N

  Index size() const { return features.cols(); }
};

std::filesystem::path sidecar_index_path(const std::filesystem::path& csv);

FeatureTable parse_feature_table(std::string_view csv, std::string_view index);
FeatureTable read_feature_table(const std::filesystem::path& csv);
std::string format_feature_csv(const MatrixXd& features);
void write_feature_table(const std::filesystem::path& csv, const FeatureTable& table);

/// (id, label) rows from a CSV whose first two columns are an id and a label
/// and whose first line is a header.
std::vector<std::pair<std::string, std::string>> parse_label_csv(std::string_view text);
std::vector<std::pair<std::string, std::string>> read_label_csv(const std::filesystem::path& path);

/// Ordered index <-> class name table.
class ClassTable {
 public:
  ClassTable() = default;
  explicit ClassTable(std::vector<std::string> names);

  /// Sorted unique labels.
  static ClassTable from_labels(const std::vector<std::pair<std::string, std::string>>& rows);

  int index_of(std::string_view name) const;
  const std::string& name(int index) const { return names_.at(index); }
  const std::vector<std::string>& names() const { return names_; }
  int size() const { return static_cast<int>(names_.size()); }

  friend bool operator==(const ClassTable&, const ClassTable&) = default;

 private:
  std::vector<std::string> names_;
};

/// Which pre-extracted features feed the embedding: detector crops or whole
/// images.
enum class FeatureSource { Crops, FullImages };

std::string_view to_string(FeatureSource s);
FeatureSource parse_feature_source(std::string_view name);

/// A pool directory holds pool.csv/pool.index (or pool_full.* for full-image
/// features), optionally holdout.csv/holdout.index (holdout_full.*),
/// classes.txt and truth.csv.
struct PoolData {
  std::filesystem::path directory;
  FeatureTable pool;
  std::optional<FeatureTable> holdout;
  std::optional<ClassTable> classes;
  std::optional<std::map<std::string, std::string>> truth;
};

PoolData load_pool_dir(const std::filesystem::path& dir, FeatureSource source = FeatureSource::Crops);
void write_pool_dir(const std::filesystem::path& dir, const PoolData& data,
                    FeatureSource source = FeatureSource::Crops);

/// Labels for `table` looked up in `truth`; throws NotFoundError naming the
/// first id without ground truth.
LabeledSamples attach_labels(const FeatureTable& table, const std::map<std::string, std::string>& truth,
                             const ClassTable& classes);

}  // namespace traplab
