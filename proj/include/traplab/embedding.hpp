#pragma once

#include "traplab/dense_net.hpp"
#include "traplab/losses.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace traplab {

using EmbeddingNet = DenseNet<double>;

/// Column-major sample set: features.col(i) has label labels[i].
struct LabeledSamples {
  MatrixXd features;
  std::vector<int> labels;

  Index size() const { return features.cols(); }
  int num_classes() const;
};

enum class EmbeddingLoss { Triplet, CrossEntropy };

std::string_view to_string(EmbeddingLoss loss);
EmbeddingLoss parse_embedding_loss(std::string_view name);

/// How a negative is picked once (anchor, positive) is fixed.
enum class MiningStrategy {
  /// Uniform over semi-hard negatives; falls back to hard ones when no
  /// semi-hard negative exists.
  SemiHard,
  /// Uniform over the union of semi-hard and hard negatives.
  SemiHardOrHard,
};

std::string_view to_string(MiningStrategy m);
MiningStrategy parse_mining_strategy(std::string_view name);

struct EmbeddingArchitecture {
  std::vector<Index> hidden{256, 256};
  Index output_dim = 256;
  Activation activation = Activation::Relu;
  double init_scale = 1.0;
};

struct TripletConfig {
  double margin = 0.2;
  MiningStrategy mining = MiningStrategy::SemiHard;
  double learning_rate = 1e-3;
  int epochs = 20;
  int batch_size = 64;
  std::uint64_t seed = 0;
  // Fine-tuning runs ceil(fraction * epochs) epochs at learning_rate * decay.
  double finetune_epoch_fraction = 0.25;
  double finetune_lr_decay = 0.5;
  // Triplets used to score the labeled set during fine-tuning. All valid
  // triplets are used when there are at most this many, else a seeded sample.
  Index eval_triplet_limit = 20000;

  void validate() const;
};

struct Triplet {
  Index anchor = 0;
  Index positive = 0;
  Index negative = 0;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

struct MiningStats {
  std::size_t semi_hard = 0;
  std::size_t hard_fallback = 0;
  std::size_t skipped = 0;
};

EmbeddingNet make_embedding_net(Index input_dim, const EmbeddingArchitecture& arch, std::uint64_t seed);

MatrixXd embed(const EmbeddingNet& net, const MatrixXd& inputs);
VectorXd embed(const EmbeddingNet& net, const VectorXd& input);

/// Negatives eligible for (anchor, positive) under `strategy`, in increasing
/// index order. Easy negatives are never eligible.
std::vector<Index> negative_candidates(Index anchor, Index positive, const MatrixXd& embeddings,
                                       std::span<const int> labels, double margin,
                                       MiningStrategy strategy = MiningStrategy::SemiHard);

/// Draws a positive uniformly from the anchor's class, then a negative
/// uniformly from negative_candidates(). Returns nothing when the anchor's
/// class has no other member or no candidate negative exists.
std::optional<Triplet> mine_triplet(Index anchor, const MatrixXd& embeddings, std::span<const int> labels,
                                    double margin, MiningStrategy strategy, Rng& rng,
                                    MiningStats* stats = nullptr);

/// Negative drawn uniformly from every semi-hard or hard negative.
inline std::optional<Triplet> mine_semihard(Index anchor, const MatrixXd& embeddings,
                                            std::span<const int> labels, double margin, Rng& rng) {
  return mine_triplet(anchor, embeddings, labels, margin, MiningStrategy::SemiHardOrHard, rng);
}

/// Number of (anchor, positive, negative) index triples: sum_c n_c (n_c - 1) (N - n_c).
std::uint64_t count_possible_triplets(std::span<const std::uint64_t> class_counts);

/// All valid triplets when there are at most `limit`, else `limit` sampled
/// uniformly (with replacement) under `seed`.
std::vector<Triplet> evaluation_triplets(std::span<const int> labels, Index limit, std::uint64_t seed);

double mean_triplet_loss(const EmbeddingNet& net, const MatrixXd& inputs, std::span<const Triplet> triplets,
                         double margin);

struct LossAndGradient {
  double loss = 0;
  EmbeddingNet grad;
};

/// Mean triplet loss over `triplets` and its gradient w.r.t. every net
/// parameter. Terms with a zero distance contribute a zero subgradient.
LossAndGradient triplet_loss_and_gradient(const EmbeddingNet& net, const MatrixXd& inputs,
                                          std::span<const Triplet> triplets, double margin);

struct XentLossAndGradient {
  double loss = 0;
  EmbeddingNet grad_net;
  DenseNet<double> grad_head;
};

/// Mean softmax cross-entropy of head(net(x)) and its gradients.
XentLossAndGradient xent_loss_and_gradient(const EmbeddingNet& net, const DenseNet<double>& head,
                                           const MatrixXd& inputs, std::span<const int> labels);

/// Called after every epoch with (epoch index, current net).
using EpochCallback = std::function<void(int, const EmbeddingNet&)>;

EmbeddingNet train_embedding_triplet(EmbeddingNet net, const LabeledSamples& data, const TripletConfig& cfg,
                                     const EpochCallback& on_epoch = {}, MiningStats* stats = nullptr);

/// Trains net plus a temporary linear head with cross-entropy; the head is
/// discarded and the net's output is the embedding. A head may be supplied;
/// otherwise a seeded one is created.
EmbeddingNet train_embedding_xent(EmbeddingNet net, const LabeledSamples& data, const TripletConfig& cfg,
                                  std::optional<DenseNet<double>> head = std::nullopt,
                                  const EpochCallback& on_epoch = {});

/// Continues training from the current weights with the reduced budget in
/// cfg. With the triplet loss, the returned weights are the best seen on the
/// labeled set's evaluation triplets, so that loss never increases.
EmbeddingNet fine_tune(EmbeddingNet net, const LabeledSamples& data, const TripletConfig& cfg,
                       EmbeddingLoss loss);

int finetune_epochs(const TripletConfig& cfg);

}  // namespace traplab
