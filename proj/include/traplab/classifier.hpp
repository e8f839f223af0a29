#pragma once

#include "traplab/dense_net.hpp"
#include "traplab/embedding.hpp"
#include "traplab/losses.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace traplab {

struct TrainConfig {
  double learning_rate = 1e-2;
  int epochs = 40;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double init_scale = 1.0;
  // Session loop only: keep the previous step's weights instead of starting
  // each retrain from a fresh seeded init.
  bool warm_start = false;

  void validate() const;
};

/// One-hidden-layer species classifier: D -> H (ReLU) -> K, softmax output.
class MlpClassifier {
 public:
  static constexpr Index kDefaultHidden = 100;

  MlpClassifier() = default;
  MlpClassifier(Index input_dim, Index num_classes, Index hidden, std::uint64_t seed, double init_scale = 1.0);
  explicit MlpClassifier(DenseNet<double> net);

  Index input_dim() const { return net_.input_dim(); }
  Index num_classes() const { return net_.output_dim(); }
  Index hidden_units() const { return net_.layers().front().output_dim(); }

  const DenseNet<double>& net() const { return net_; }
  DenseNet<double>& net() { return net_; }

  /// K x N class probabilities for the columns of `features`.
  MatrixXd predict_proba(const MatrixXd& features) const;
  VectorXd predict_proba_one(const VectorXd& feature) const;
  Index predict_one(const VectorXd& feature) const { return argmax(predict_proba_one(feature)); }

  friend bool operator==(const MlpClassifier&, const MlpClassifier&) = default;

 private:
  DenseNet<double> net_;
};

/// Mini-batch Adam on mean cross-entropy, starting from clf's current
/// weights. Optionally records the mean training loss after every epoch.
MlpClassifier train_classifier(MlpClassifier clf, const LabeledSamples& data, const TrainConfig& cfg,
                               std::vector<double>* epoch_losses = nullptr);

/// Mean cross-entropy and its gradient w.r.t. every classifier parameter.
std::pair<double, DenseNet<double>> classifier_loss_and_gradient(const MlpClassifier& clf,
                                                                 const MatrixXd& features,
                                                                 std::span<const int> labels);

/// Fraction of columns whose argmax prediction (ties to the lowest index)
/// equals the label.
double evaluate_accuracy(const MlpClassifier& clf, const LabeledSamples& holdout);

}  // namespace traplab
