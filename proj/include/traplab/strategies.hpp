#pragma once

#include "traplab/core.hpp"

#include <array>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace traplab {

enum class StrategyKind { Random, Confidence, Margin, Entropy, InformativeDiverse, MarginClusterMean, KCenter };

inline constexpr std::array<StrategyKind, 7> kAllStrategies{
    StrategyKind::Random,  StrategyKind::Confidence,         StrategyKind::Margin,
    StrategyKind::Entropy, StrategyKind::InformativeDiverse, StrategyKind::MarginClusterMean,
    StrategyKind::KCenter};

std::string_view to_string(StrategyKind kind);

/// Throws ValidationError listing every valid name when `name` is unknown.
StrategyKind parse_strategy(std::string_view name);

std::string strategy_names();

struct StrategyParams {
  // Margin-cluster-mean: unlabeled items with top-2 probability gap below
  // this form the margin region.
  double margin_tau = 0.2;
  // Informative-diverse cluster count; 0 selects min(20, ceil(sqrt(pool))).
  int clusters = 0;
  int kmeans_max_iterations = 100;
  // Pools larger than this are clustered on a seeded subsample; the rest
  // join the cluster of their nearest subsample point.
  Index agglomerative_limit = 6000;
};

/// Pool clustering reused across selection calls while the embeddings it was
/// computed from stay alive and unchanged.
struct ClusterCache {
  std::shared_ptr<const MatrixXd> embeddings;
  int clusters = 0;
  std::vector<int> assignment;
};

struct SelectionContext {
  std::shared_ptr<const MatrixXd> embeddings;  // D x N, one column per pool item
  std::vector<Index> labeled;                  // ascending
  std::vector<Index> unlabeled;                // ascending
  MatrixXd probabilities;                      // K x N classifier output, may be empty
  StrategyParams params;
  ClusterCache* cache = nullptr;

  Index pool_size() const { return embeddings ? embeddings->cols() : probabilities.cols(); }

  /// Checks the partition invariants and that n unlabeled items exist.
  void validate(Index n) const;
};

/// One picked pool index with the strategy's score for it (logged in the
/// selection audit).
struct Selected {
  Index index = 0;
  double score = 0;

  friend bool operator==(const Selected&, const Selected&) = default;
};

std::vector<Selected> select_random(const SelectionContext& ctx, Index n, Rng& rng);
std::vector<Selected> select_confidence(const SelectionContext& ctx, Index n);
std::vector<Selected> select_margin(const SelectionContext& ctx, Index n);
std::vector<Selected> select_entropy(const SelectionContext& ctx, Index n);
std::vector<Selected> select_kcenter(const SelectionContext& ctx, Index n);
std::vector<Selected> select_informative_diverse(const SelectionContext& ctx, Index n);
std::vector<Selected> select_margin_cluster_mean(const SelectionContext& ctx, Index n, Rng& rng);

std::vector<Selected> select(StrategyKind kind, const SelectionContext& ctx, Index n, Rng& rng);

// Per-item uncertainty scores over one probability column.
double max_probability(const Eigen::Ref<const VectorXd>& p);
double top2_margin(const Eigen::Ref<const VectorXd>& p);
double shannon_entropy(const Eigen::Ref<const VectorXd>& p);

/// Pool clustering used by informative-diverse selection.
std::vector<int> cluster_pool(const MatrixXd& embeddings, int clusters, Index agglomerative_limit,
                              std::uint64_t seed);

int default_cluster_count(Index pool_size);

}  // namespace traplab
