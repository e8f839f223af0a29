#include "traplab/classifier.hpp"

#include <numeric>

namespace traplab {

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ValidationError("classifier learning rate must be positive");
  if (epochs < 0) throw ValidationError("classifier epochs must be non-negative");
  if (batch_size < 1) throw ValidationError("classifier batch size must be at least 1");
  if (!(init_scale > 0)) throw ValidationError("classifier init scale must be positive");
}

MlpClassifier::MlpClassifier(Index input_dim, Index num_classes, Index hidden, std::uint64_t seed,
                             double init_scale) {
  if (num_classes < 1) throw DimensionError("classifier needs at least one class");
  Rng rng(seed);
  net_ = DenseNet<double>::random({input_dim, hidden, num_classes}, Activation::Relu, rng, init_scale);
}

MlpClassifier::MlpClassifier(DenseNet<double> net) : net_(std::move(net)) {
  if (net_.num_layers() != 2 || net_.hidden_activation() != Activation::Relu)
    throw DimensionError("classifier net must have exactly one ReLU hidden layer");
}

MatrixXd MlpClassifier::predict_proba(const MatrixXd& features) const {
  return softmax(net_.forward(features));
}

VectorXd MlpClassifier::predict_proba_one(const VectorXd& feature) const {
  return softmax(net_.forward(feature));
}

std::pair<double, DenseNet<double>> classifier_loss_and_gradient(const MlpClassifier& clf,
                                                                 const MatrixXd& features,
                                                                 std::span<const int> labels) {
  DenseNet<double>::Tape tape;
  const MatrixXd probs = softmax(clf.net().forward(features, tape));
  DenseNet<double> grad = clf.net().zeros_like();
  MatrixXd d_logits = probs;
  double loss = 0;
  const double scale = 1.0 / static_cast<double>(labels.size());
  for (Index j = 0; j < probs.cols(); ++j) {
    loss += cross_entropy(probs.col(j), labels[j]) * scale;
    d_logits(labels[j], j) -= 1.0;
  }
  d_logits *= scale;
  clf.net().backward(tape, std::move(d_logits), grad);
  return {loss, std::move(grad)};
}

namespace {

double mean_loss(const MlpClassifier& clf, const LabeledSamples& data) {
  const MatrixXd probs = clf.predict_proba(data.features);
  double sum = 0;
  for (Index j = 0; j < probs.cols(); ++j) sum += cross_entropy(probs.col(j), data.labels[j]);
  return sum / static_cast<double>(probs.cols());
}

}  // namespace

MlpClassifier train_classifier(MlpClassifier clf, const LabeledSamples& data, const TrainConfig& cfg,
                               std::vector<double>* epoch_losses) {
  cfg.validate();
  if (data.size() == 0) throw ValidationError("train_classifier: empty training set");
  if (data.features.cols() != static_cast<Index>(data.labels.size()))
    throw DimensionError("train_classifier: features and labels disagree on sample count");
  if (data.features.rows() != clf.input_dim()) throw DimensionError("train_classifier: feature dim mismatch");
  for (const int l : data.labels)
    if (l < 0 || l >= clf.num_classes())
      throw ValidationError("train_classifier: label " + std::to_string(l) + " outside [0, " +
                            std::to_string(clf.num_classes()) + ")");
  Rng rng(mix_seed(cfg.seed, 0xC1A5));
  Adam<double> optimizer(clf.net(), {.learning_rate = cfg.learning_rate});
  std::vector<Index> order(data.size());
  std::iota(order.begin(), order.end(), Index{0});
  MatrixXd x;
  std::vector<int> y;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      x.resize(data.features.rows(), static_cast<Index>(stop - start));
      y.resize(stop - start);
      for (std::size_t k = start; k < stop; ++k) {
        x.col(k - start) = data.features.col(order[k]);
        y[k - start] = data.labels[order[k]];
      }
      const auto [loss, grad] = classifier_loss_and_gradient(clf, x, y);
      optimizer.step(clf.net(), grad);
    }
    if (epoch_losses) epoch_losses->push_back(mean_loss(clf, data));
  }
  return clf;
}

double evaluate_accuracy(const MlpClassifier& clf, const LabeledSamples& holdout) {
  if (holdout.size() == 0) throw ValidationError("evaluate_accuracy: empty holdout");
  const MatrixXd probs = clf.predict_proba(holdout.features);
  Index correct = 0;
  for (Index j = 0; j < probs.cols(); ++j) correct += argmax(probs.col(j)) == holdout.labels[j];
  return static_cast<double>(correct) / static_cast<double>(probs.cols());
}

}  // namespace traplab
