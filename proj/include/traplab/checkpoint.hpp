#pragma once

#include "traplab/classifier.hpp"
#include "traplab/embedding.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace traplab {

// Checkpoints are versioned JSON containers. Weight matrices are stored
// row-major as flat arrays next to their shape.
inline constexpr int kCheckpointVersion = 1;

nlohmann::json net_to_json(const DenseNet<double>& net);
DenseNet<double> net_from_json(const nlohmann::json& j);

struct EmbeddingCheckpoint {
  EmbeddingNet net;
  EmbeddingLoss loss = EmbeddingLoss::Triplet;
  // Seeds of every training run that produced these weights, oldest first.
  std::vector<std::uint64_t> seed_lineage;
};

struct ClassifierCheckpoint {
  MlpClassifier classifier;
  std::vector<std::string> class_names;
  std::vector<std::uint64_t> seed_lineage;
};

nlohmann::json to_json(const EmbeddingCheckpoint& ckpt);
EmbeddingCheckpoint embedding_checkpoint_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ClassifierCheckpoint& ckpt);
ClassifierCheckpoint classifier_checkpoint_from_json(const nlohmann::json& j);

std::string save_embedding_checkpoint(const EmbeddingCheckpoint& ckpt);
EmbeddingCheckpoint load_embedding_checkpoint(std::string_view bytes);
std::string save_classifier_checkpoint(const ClassifierCheckpoint& ckpt);
ClassifierCheckpoint load_classifier_checkpoint(std::string_view bytes);

/// Parses JSON, turning syntax errors (including truncation) into ParseError.
nlohmann::json parse_json_document(std::string_view bytes, std::string_view what);

}  // namespace traplab
