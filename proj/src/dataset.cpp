#include "traplab/dataset.hpp"

#include "traplab/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <unordered_set>

namespace traplab {

std::filesystem::path sidecar_index_path(const std::filesystem::path& csv) {
  std::filesystem::path p = csv;
  p.replace_extension(".index");
  return p;
}

FeatureTable parse_feature_table(std::string_view csv, std::string_view index) {
  FeatureTable table;
  for (const auto line : split_lines(index))
    if (!line.empty()) table.ids.emplace_back(line);
  std::unordered_set<std::string_view> seen;
  for (const auto& id : table.ids)
    if (!seen.insert(id).second) throw ParseError("feature index lists id '" + id + "' twice");
  const auto rows = split_lines(csv);
  std::vector<std::vector<double>> values;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].empty()) continue;
    std::vector<double> row;
    const char* p = rows[r].data();
    const char* end = p + rows[r].size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      double v = 0;
      const auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc())
        throw ParseError("feature CSV line " + std::to_string(r + 1) + ": expected a number");
      if (!std::isfinite(v))
        throw ParseError("feature CSV line " + std::to_string(r + 1) + ": non-finite value");
      row.push_back(v);
      p = next;
      while (p < end && *p == ' ') ++p;
      if (p < end) {
        if (*p != ',') throw ParseError("feature CSV line " + std::to_string(r + 1) + ": expected ','");
        ++p;
      }
    }
    if (!values.empty() && row.size() != values.front().size())
      throw ParseError("feature CSV line " + std::to_string(r + 1) + ": ragged row");
    values.push_back(std::move(row));
  }
  if (values.size() != table.ids.size())
    throw ParseError("feature table has " + std::to_string(values.size()) + " rows but its index lists " +
                     std::to_string(table.ids.size()) + " ids");
  const Index dim = values.empty() ? 0 : static_cast<Index>(values.front().size());
  table.features.resize(dim, static_cast<Index>(values.size()));
  for (std::size_t j = 0; j < values.size(); ++j)
    for (Index i = 0; i < dim; ++i) table.features(i, static_cast<Index>(j)) = values[j][i];
  return table;
}

FeatureTable read_feature_table(const std::filesystem::path& csv) {
  return parse_feature_table(read_text_file(csv), read_text_file(sidecar_index_path(csv)));
}

std::string format_feature_csv(const MatrixXd& features) {
  std::string out;
  char buf[64];
  for (Index j = 0; j < features.cols(); ++j) {
    for (Index i = 0; i < features.rows(); ++i) {
      const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, features(i, j));
      if (i) out += ',';
      out.append(buf, end);
    }
    out += '\n';
  }
  return out;
}

void write_feature_table(const std::filesystem::path& csv, const FeatureTable& table) {
  std::string index;
  for (const auto& id : table.ids) index += id + '\n';
  write_file_atomic(csv, format_feature_csv(table.features));
  write_file_atomic(sidecar_index_path(csv), index);
}

std::vector<std::pair<std::string, std::string>> parse_label_csv(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw ParseError("label CSV is empty");
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split_csv_line(lines[i]);
    if (f.size() < 2) throw ParseError("label CSV line " + std::to_string(i + 1) + ": expected id,label");
    out.emplace_back(std::move(f[0]), std::move(f[1]));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> read_label_csv(const std::filesystem::path& path) {
  return parse_label_csv(read_text_file(path));
}

ClassTable::ClassTable(std::vector<std::string> names) : names_(std::move(names)) {
  std::set<std::string> unique(names_.begin(), names_.end());
  if (unique.size() != names_.size()) throw ValidationError("class table has duplicate names");
}

ClassTable ClassTable::from_labels(const std::vector<std::pair<std::string, std::string>>& rows) {
  std::set<std::string> unique;
  for (const auto& [id, label] : rows) unique.insert(label);
  return ClassTable(std::vector<std::string>(unique.begin(), unique.end()));
}

int ClassTable::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return static_cast<int>(i);
  throw NotFoundError("unknown class '" + std::string(name) + "'");
}

std::string_view to_string(FeatureSource s) { return s == FeatureSource::Crops ? "crops" : "full"; }

FeatureSource parse_feature_source(std::string_view name) {
  if (name == "crops") return FeatureSource::Crops;
  if (name == "full") return FeatureSource::FullImages;
  throw ValidationError("unknown feature source '" + std::string(name) + "' (expected crops or full)");
}

namespace {

std::string file_stem(std::string_view base, FeatureSource source) {
  return std::string(base) + (source == FeatureSource::Crops ? "" : "_full");
}

}  // namespace

PoolData load_pool_dir(const std::filesystem::path& dir, FeatureSource source) {
  PoolData data;
  data.directory = dir;
  const auto pool_csv = dir / (file_stem("pool", source) + ".csv");
  if (!std::filesystem::exists(pool_csv)) throw NotFoundError("pool directory lacks " + pool_csv.string());
  data.pool = read_feature_table(pool_csv);
  const auto holdout_csv = dir / (file_stem("holdout", source) + ".csv");
  if (std::filesystem::exists(holdout_csv)) {
    data.holdout = read_feature_table(holdout_csv);
    if (data.holdout->features.rows() != data.pool.features.rows() && data.holdout->size() > 0)
      throw ValidationError("holdout and pool features have different dimensions");
  }
  if (std::filesystem::exists(dir / "classes.txt")) {
    std::vector<std::string> names;
    const std::string text = read_text_file(dir / "classes.txt");
    for (const auto line : split_lines(text))
      if (!line.empty()) names.emplace_back(line);
    data.classes = ClassTable(std::move(names));
  }
  if (std::filesystem::exists(dir / "truth.csv")) {
    std::map<std::string, std::string> truth;
    for (auto& [id, label] : read_label_csv(dir / "truth.csv")) truth[id] = label;
    data.truth = std::move(truth);
  }
  return data;
}

void write_pool_dir(const std::filesystem::path& dir, const PoolData& data, FeatureSource source) {
  std::filesystem::create_directories(dir);
  write_feature_table(dir / (file_stem("pool", source) + ".csv"), data.pool);
  if (data.holdout) write_feature_table(dir / (file_stem("holdout", source) + ".csv"), *data.holdout);
  if (data.classes) {
    std::string text;
    for (const auto& n : data.classes->names()) text += n + '\n';
    write_file_atomic(dir / "classes.txt", text);
  }
  if (data.truth) {
    std::string text = "crop_id,label\n";
    for (const auto& [id, label] : *data.truth) text += id + ',' + label + '\n';
    write_file_atomic(dir / "truth.csv", text);
  }
}

LabeledSamples attach_labels(const FeatureTable& table, const std::map<std::string, std::string>& truth,
                             const ClassTable& classes) {
  LabeledSamples out;
  out.features = table.features;
  out.labels.reserve(table.ids.size());
  for (const auto& id : table.ids) {
    const auto it = truth.find(id);
    if (it == truth.end()) throw NotFoundError("no ground truth for '" + id + "'");
    out.labels.push_back(classes.index_of(it->second));
  }
  return out;
}

}  // namespace traplab
