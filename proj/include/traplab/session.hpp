#pragma once

#include "traplab/checkpoint.hpp"
#include "traplab/classifier.hpp"
#include "traplab/dataset.hpp"
#include "traplab/embedding.hpp"
#include "traplab/strategies.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace traplab {

struct LoopConfig {
  Index initial_random = 1000;
  Index batch_size = 100;
  Index finetune_interval = 2000;
  Index finetune_start = 2000;
  Index budget = 30000;
  StrategyKind strategy = StrategyKind::KCenter;
  std::uint64_t seed = 0;

  // Loss used when the session trains its own embedding and for fine-tuning.
  EmbeddingLoss loss = EmbeddingLoss::Triplet;
  bool finetune = true;
  StrategyParams strategy_params;
  TripletConfig embedding;
  TrainConfig classifier;
  EmbeddingArchitecture architecture;
  Index classifier_hidden = MlpClassifier::kDefaultHidden;
  FeatureSource source = FeatureSource::Crops;

  void validate() const;
};

nlohmann::json to_json(const LoopConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
LoopConfig loop_config_from_json(const nlohmann::json& j);

/// True when the embedding is fine-tuned on reaching `labels`.
bool finetune_due(const LoopConfig& cfg, Index labels);

struct CurvePoint {
  Index labels = 0;
  double accuracy = 0;  // NaN without a holdout
  double wall_time = 0;
};

std::string format_curve_csv(const std::vector<CurvePoint>& curve);

struct SelectionRecord {
  Index step = 0;
  StrategyKind strategy = StrategyKind::Random;
  Index index = 0;
  double score = 0;
};

std::string format_selections_csv(const std::vector<SelectionRecord>& audit);

/// Label source for a batch of pool item ids.
class Oracle {
 public:
  virtual ~Oracle() = default;
  /// One class index per id, order-aligned with `ids`.
  virtual std::vector<int> label(const std::vector<std::string>& ids) = 0;
  virtual std::string_view kind() const = 0;
};

/// Answers from a ground-truth table; an unknown id raises NotFoundError.
class SimulatedOracle : public Oracle {
 public:
  SimulatedOracle(const std::map<std::string, std::string>& truth, const ClassTable& classes);

  std::vector<int> label(const std::vector<std::string>& ids) override;
  std::string_view kind() const override { return "simulated"; }

 private:
  std::map<std::string, int> labels_;
};

/// Data a session runs over. Pool and holdout are shared and never mutated.
struct SessionData {
  std::shared_ptr<const FeatureTable> pool;
  std::shared_ptr<const LabeledSamples> holdout;  // may be null
  ClassTable classes;
};

SessionData make_session_data(const PoolData& data);

/// FNV-1a over the pool ids and feature dimension.
std::uint64_t pool_fingerprint(const FeatureTable& pool);

enum class Phase { AwaitingLabels, Training, Done };

std::string_view to_string(Phase p);

enum class RecordResult { Accepted, Duplicate };

/// Seconds on a monotonic clock; a constant clock makes wall times zero.
using Clock = std::function<double()>;
Clock steady_clock_seconds();

/// One active-learning session: the labeled/unlabeled partition, models,
/// pending query batch, learning curve and RNG. Batches are issued, answered
/// item by item, then committed; commit retrains and issues the next batch.
class Session {
 public:
  /// Draws the initial random batch. Without `pretrained`, the embedding is
  /// trained on the initial labels during the first commit.
  static Session create(SessionData data, LoopConfig cfg, std::optional<EmbeddingCheckpoint> pretrained = {},
                        Clock clock = steady_clock_seconds());

  /// Restores a saved session over the same data (checked by fingerprint).
  static Session load(std::string_view bytes, SessionData data, Clock clock = steady_clock_seconds());
  std::string save() const;

  const LoopConfig& config() const { return cfg_; }
  const SessionData& data() const { return data_; }
  Phase phase() const;
  Index step() const { return step_; }
  Index labels_acquired() const { return static_cast<Index>(labeled_.size()); }
  const std::map<Index, int>& labeled() const { return labeled_; }
  const std::vector<Index>& unlabeled() const { return unlabeled_; }
  const std::vector<CurvePoint>& history() const { return history_; }
  const std::vector<SelectionRecord>& audit() const { return audit_; }
  const std::vector<Index>& finetune_events() const { return finetune_events_; }

  /// Id of the pending batch (the step it was issued at).
  Index batch_id() const { return step_; }
  const std::vector<Index>& pending() const { return pending_; }
  const std::map<Index, int>& answers() const { return answers_; }
  std::vector<Index> unanswered() const;
  std::vector<std::string> pending_ids() const;
  const std::string& item_id(Index index) const { return data_.pool->ids.at(index); }
  /// Pool index of `id`, or nothing.
  std::optional<Index> find_item(std::string_view id) const;

  /// Records one answer for a pending item. Repeating the same label is a
  /// Duplicate; a different label raises ConflictError; an item outside the
  /// pending batch raises NotFoundError; a bad class index ValidationError.
  RecordResult record_label(Index item, int label);
  /// What record_label would return, without recording.
  RecordResult check_label(Index item, int label) const;
  bool ready_to_commit() const;

  /// Moves the answers into the labeled set, trains, evaluates and issues the
  /// next batch. All pending items must be answered.
  void commit();

  /// Labels the unanswered pending items with `oracle` and commits. On any
  /// exception the session is left exactly as it was.
  void step(Oracle& oracle);

  /// Steps until the budget is reached or the pool runs out.
  void run(Oracle& oracle);

  const EmbeddingNet* embedding_net() const { return embedding_ ? &*embedding_ : nullptr; }
  const MlpClassifier* classifier() const { return classifier_ ? &*classifier_ : nullptr; }
  std::optional<EmbeddingCheckpoint> embedding_checkpoint() const;
  std::optional<ClassifierCheckpoint> classifier_checkpoint() const;
  std::shared_ptr<const MatrixXd> pool_embeddings() const { return pool_embedded_; }

 private:
  Session() = default;

  LabeledSamples labeled_samples() const;
  void attach(SessionData data);
  void refresh_embeddings();
  void commit_in_place();
  void issue_next_batch();
  nlohmann::json to_json() const;

  SessionData data_;
  LoopConfig cfg_;
  Clock clock_;

  std::map<Index, int> labeled_;
  std::vector<Index> unlabeled_;
  Index step_ = 0;
  std::vector<Index> pending_;
  std::map<Index, int> answers_;
  std::vector<CurvePoint> history_;
  std::vector<SelectionRecord> audit_;
  std::vector<Index> finetune_events_;
  double elapsed_ = 0;
  Rng rng_;
  std::shared_ptr<const std::unordered_map<std::string, Index>> id_index_;

  std::optional<EmbeddingNet> embedding_;
  std::vector<std::uint64_t> embedding_lineage_;
  std::optional<MlpClassifier> classifier_;
  std::vector<std::uint64_t> classifier_lineage_;

  // Derived from the above; rebuilt on load.
  std::shared_ptr<const MatrixXd> pool_embedded_;
  MatrixXd holdout_embedded_;
  std::shared_ptr<ClusterCache> cluster_cache_ = std::make_shared<ClusterCache>();
};

/// Runs a fresh session to its budget with a simulated oracle.
std::vector<CurvePoint> run_simulation(SessionData data, const std::map<std::string, std::string>& truth,
                                       const LoopConfig& cfg, std::optional<EmbeddingCheckpoint> pretrained = {},
                                       Clock clock = steady_clock_seconds());

}  // namespace traplab
