#include "traplab/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace traplab {

int LabeledSamples::num_classes() const {
  if (labels.empty()) return 0;
  return *std::max_element(labels.begin(), labels.end()) + 1;
}

std::string_view to_string(EmbeddingLoss loss) {
  return loss == EmbeddingLoss::Triplet ? "triplet" : "xent";
}

EmbeddingLoss parse_embedding_loss(std::string_view name) {
  if (name == "triplet") return EmbeddingLoss::Triplet;
  if (name == "xent" || name == "cross-entropy") return EmbeddingLoss::CrossEntropy;
  throw ValidationError("unknown embedding loss '" + std::string(name) + "' (expected triplet or xent)");
}

std::string_view to_string(MiningStrategy m) {
  return m == MiningStrategy::SemiHard ? "semi-hard" : "semi-hard-or-hard";
}

MiningStrategy parse_mining_strategy(std::string_view name) {
  if (name == "semi-hard") return MiningStrategy::SemiHard;
  if (name == "semi-hard-or-hard") return MiningStrategy::SemiHardOrHard;
  throw ValidationError("unknown mining strategy '" + std::string(name) + "'");
}

void TripletConfig::validate() const {
  if (!(margin > 0)) throw ValidationError("triplet margin must be positive");
  if (learning_rate < 0) throw ValidationError("learning rate must be non-negative");
  if (epochs < 0) throw ValidationError("epochs must be non-negative");
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  if (finetune_epoch_fraction < 0) throw ValidationError("fine-tune epoch fraction must be non-negative");
  if (eval_triplet_limit < 1) throw ValidationError("evaluation triplet limit must be positive");
}

EmbeddingNet make_embedding_net(Index input_dim, const EmbeddingArchitecture& arch, std::uint64_t seed) {
  std::vector<Index> dims{input_dim};
  dims.insert(dims.end(), arch.hidden.begin(), arch.hidden.end());
  dims.push_back(arch.output_dim);
  Rng rng(seed);
  return EmbeddingNet::random(dims, arch.activation, rng, arch.init_scale);
}

MatrixXd embed(const EmbeddingNet& net, const MatrixXd& inputs) { return net.forward(inputs); }

VectorXd embed(const EmbeddingNet& net, const VectorXd& input) { return net.forward(input); }

std::vector<Index> negative_candidates(Index anchor, Index positive, const MatrixXd& embeddings,
                                       std::span<const int> labels, double margin,
                                       MiningStrategy strategy) {
  const auto a = embeddings.col(anchor);
  const double d_ap = distance(a, embeddings.col(positive));
  std::vector<Index> semi_hard;
  std::vector<Index> hard;
  for (Index n = 0; n < static_cast<Index>(labels.size()); ++n) {
    if (labels[n] == labels[anchor]) continue;
    switch (classify_triplet(d_ap, distance(a, embeddings.col(n)), margin)) {
      case TripletKind::SemiHard: semi_hard.push_back(n); break;
      case TripletKind::Hard: hard.push_back(n); break;
      case TripletKind::Easy: break;
    }
  }
  if (strategy == MiningStrategy::SemiHard) return semi_hard.empty() ? hard : semi_hard;
  std::vector<Index> both;
  std::merge(semi_hard.begin(), semi_hard.end(), hard.begin(), hard.end(), std::back_inserter(both));
  return both;
}

std::optional<Triplet> mine_triplet(Index anchor, const MatrixXd& embeddings, std::span<const int> labels,
                                    double margin, MiningStrategy strategy, Rng& rng, MiningStats* stats) {
  if (embeddings.cols() != static_cast<Index>(labels.size()))
    throw DimensionError("mine_triplet: embeddings and labels disagree on sample count");
  std::vector<Index> positives;
  bool has_negative = false;
  for (Index i = 0; i < static_cast<Index>(labels.size()); ++i) {
    if (labels[i] == labels[anchor]) {
      if (i != anchor) positives.push_back(i);
    } else {
      has_negative = true;
    }
  }
  if (positives.empty() || !has_negative) {
    if (stats) ++stats->skipped;
    return std::nullopt;
  }
  const Index positive = positives[uniform_index(rng, positives.size())];
  const auto candidates = negative_candidates(anchor, positive, embeddings, labels, margin, strategy);
  if (candidates.empty()) {
    if (stats) ++stats->skipped;
    return std::nullopt;
  }
  const Index negative = candidates[uniform_index(rng, candidates.size())];
  if (stats) {
    const double d_ap = distance(embeddings.col(anchor), embeddings.col(positive));
    const double d_an = distance(embeddings.col(anchor), embeddings.col(negative));
    if (classify_triplet(d_ap, d_an, margin) == TripletKind::SemiHard)
      ++stats->semi_hard;
    else
      ++stats->hard_fallback;
  }
  return Triplet{anchor, positive, negative};
}

std::uint64_t count_possible_triplets(std::span<const std::uint64_t> class_counts) {
  const std::uint64_t total = std::accumulate(class_counts.begin(), class_counts.end(), std::uint64_t{0});
  std::uint64_t count = 0;
  for (const auto n : class_counts)
    if (n >= 2) count += n * (n - 1) * (total - n);
  return count;
}

namespace {

std::map<int, std::vector<Index>> members_by_class(std::span<const int> labels) {
  std::map<int, std::vector<Index>> members;
  for (Index i = 0; i < static_cast<Index>(labels.size()); ++i) members[labels[i]].push_back(i);
  return members;
}

std::vector<std::uint64_t> class_sizes(std::span<const int> labels) {
  std::vector<std::uint64_t> sizes;
  for (const auto& [label, members] : members_by_class(labels)) sizes.push_back(members.size());
  return sizes;
}

}  // namespace

std::vector<Triplet> evaluation_triplets(std::span<const int> labels, Index limit, std::uint64_t seed) {
  const auto members = members_by_class(labels);
  const auto sizes = class_sizes(labels);
  const std::uint64_t total = count_possible_triplets(sizes);
  std::vector<Triplet> out;
  if (total == 0) return out;
  const Index n = static_cast<Index>(labels.size());
  if (total <= static_cast<std::uint64_t>(limit)) {
    out.reserve(total);
    for (Index a = 0; a < n; ++a)
      for (const Index p : members.at(labels[a])) {
        if (p == a) continue;
        for (Index neg = 0; neg < n; ++neg)
          if (labels[neg] != labels[a]) out.push_back({a, p, neg});
      }
    return out;
  }
  // Rejection sampling over anchors whose class can form a triplet.
  Rng rng(seed);
  out.reserve(limit);
  while (static_cast<Index>(out.size()) < limit) {
    const Index a = static_cast<Index>(uniform_index(rng, n));
    const auto& same = members.at(labels[a]);
    if (same.size() < 2 || same.size() == static_cast<std::size_t>(n)) continue;
    Index p = a;
    while (p == a) p = same[uniform_index(rng, same.size())];
    Index neg = a;
    while (labels[neg] == labels[a]) neg = static_cast<Index>(uniform_index(rng, n));
    out.push_back({a, p, neg});
  }
  return out;
}

namespace {

// Gathers the distinct sample columns used by a set of triplets so each one
// is forwarded once.
struct TripletBatch {
  std::vector<Index> columns;
  std::vector<Index> slot;  // sample index -> column in `inputs`, or -1
  MatrixXd inputs;
};

TripletBatch gather(const MatrixXd& inputs, std::span<const Triplet> triplets) {
  TripletBatch batch;
  batch.slot.assign(inputs.cols(), -1);
  for (const auto& t : triplets)
    for (const Index i : {t.anchor, t.positive, t.negative})
      if (batch.slot[i] < 0) {
        batch.slot[i] = static_cast<Index>(batch.columns.size());
        batch.columns.push_back(i);
      }
  batch.inputs.resize(inputs.rows(), static_cast<Index>(batch.columns.size()));
  for (std::size_t k = 0; k < batch.columns.size(); ++k) batch.inputs.col(k) = inputs.col(batch.columns[k]);
  return batch;
}

}  // namespace

double mean_triplet_loss(const EmbeddingNet& net, const MatrixXd& inputs, std::span<const Triplet> triplets,
                         double margin) {
  if (triplets.empty()) return 0.0;
  const TripletBatch batch = gather(inputs, triplets);
  const MatrixXd emb = net.forward(batch.inputs);
  double sum = 0;
  for (const auto& t : triplets) {
    const auto a = emb.col(batch.slot[t.anchor]);
    sum += triplet_loss(distance(a, emb.col(batch.slot[t.positive])),
                        distance(a, emb.col(batch.slot[t.negative])), margin);
  }
  return sum / static_cast<double>(triplets.size());
}

LossAndGradient triplet_loss_and_gradient(const EmbeddingNet& net, const MatrixXd& inputs,
                                          std::span<const Triplet> triplets, double margin) {
  LossAndGradient out{0.0, net.zeros_like()};
  if (triplets.empty()) return out;
  const TripletBatch batch = gather(inputs, triplets);
  EmbeddingNet::Tape tape;
  const MatrixXd emb = net.forward(batch.inputs, tape);
  MatrixXd d_emb = MatrixXd::Zero(emb.rows(), emb.cols());
  const double scale = 1.0 / static_cast<double>(triplets.size());
  for (const auto& t : triplets) {
    const Index ia = batch.slot[t.anchor];
    const Index ip = batch.slot[t.positive];
    const Index in = batch.slot[t.negative];
    const VectorXd ap = emb.col(ia) - emb.col(ip);
    const VectorXd an = emb.col(ia) - emb.col(in);
    const double d_ap = ap.norm();
    const double d_an = an.norm();
    const double loss = triplet_loss(d_ap, d_an, margin);
    out.loss += loss * scale;
    if (loss <= 0) continue;
    if (d_ap > 0) {
      d_emb.col(ia) += scale * ap / d_ap;
      d_emb.col(ip) -= scale * ap / d_ap;
    }
    if (d_an > 0) {
      d_emb.col(ia) -= scale * an / d_an;
      d_emb.col(in) += scale * an / d_an;
    }
  }
  net.backward(tape, std::move(d_emb), out.grad);
  return out;
}

XentLossAndGradient xent_loss_and_gradient(const EmbeddingNet& net, const DenseNet<double>& head,
                                           const MatrixXd& inputs, std::span<const int> labels) {
  if (inputs.cols() != static_cast<Index>(labels.size()))
    throw DimensionError("xent: inputs and labels disagree on sample count");
  XentLossAndGradient out{0.0, net.zeros_like(), head.zeros_like()};
  if (labels.empty()) return out;
  EmbeddingNet::Tape net_tape;
  DenseNet<double>::Tape head_tape;
  const MatrixXd emb = net.forward(inputs, net_tape);
  const MatrixXd probs = softmax(head.forward(emb, head_tape));
  MatrixXd d_logits = probs;
  const double scale = 1.0 / static_cast<double>(labels.size());
  for (Index j = 0; j < probs.cols(); ++j) {
    if (labels[j] < 0 || labels[j] >= probs.rows()) throw DomainError("xent: label out of range");
    out.loss += cross_entropy(probs.col(j), labels[j]) * scale;
    d_logits(labels[j], j) -= 1.0;
  }
  d_logits *= scale;
  MatrixXd d_emb = head.backward(head_tape, std::move(d_logits), out.grad_head);
  net.backward(net_tape, std::move(d_emb), out.grad_net);
  return out;
}

namespace {

void check_trainable(const LabeledSamples& data) {
  if (data.features.cols() != static_cast<Index>(data.labels.size()))
    throw DimensionError("training data: features and labels disagree on sample count");
  for (const int l : data.labels)
    if (l < 0) throw ValidationError("training data: negative label");
}

std::vector<Index> shuffled(std::vector<Index> v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
  return v;
}

EmbeddingNet run_triplet_epochs(EmbeddingNet net, const LabeledSamples& data, const TripletConfig& cfg,
                                int epochs, double learning_rate, std::uint64_t seed,
                                const EpochCallback& on_epoch, MiningStats* stats) {
  Rng rng(seed);
  Adam<double> optimizer(net, {.learning_rate = learning_rate});
  std::vector<Index> anchors(data.size());
  std::iota(anchors.begin(), anchors.end(), Index{0});
  for (int epoch = 0; epoch < epochs; ++epoch) {
    // Mining reads a per-epoch snapshot of the embedding; losses and
    // gradients always use the current weights.
    const MatrixXd snapshot = net.forward(data.features);
    const auto order = shuffled(anchors, rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Triplet> triplets;
      for (std::size_t k = start; k < stop; ++k)
        if (auto t = mine_triplet(order[k], snapshot, data.labels, cfg.margin, cfg.mining, rng, stats))
          triplets.push_back(*t);
      if (triplets.empty()) continue;
      const auto step = triplet_loss_and_gradient(net, data.features, triplets, cfg.margin);
      if (step.loss > 0) optimizer.step(net, step.grad);
    }
    if (on_epoch) on_epoch(epoch, net);
  }
  return net;
}

DenseNet<double> make_head(Index embedding_dim, int num_classes, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x4EAD));
  return DenseNet<double>::random({embedding_dim, num_classes}, Activation::Identity, rng);
}

EmbeddingNet run_xent_epochs(EmbeddingNet net, DenseNet<double> head, const LabeledSamples& data,
                             const TripletConfig& cfg, int epochs, double learning_rate, std::uint64_t seed,
                             const EpochCallback& on_epoch) {
  Rng rng(seed);
  Adam<double> net_opt(net, {.learning_rate = learning_rate});
  Adam<double> head_opt(head, {.learning_rate = learning_rate});
  std::vector<Index> all(data.size());
  std::iota(all.begin(), all.end(), Index{0});
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto order = shuffled(all, rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      MatrixXd x(data.features.rows(), static_cast<Index>(stop - start));
      std::vector<int> y(stop - start);
      for (std::size_t k = start; k < stop; ++k) {
        x.col(k - start) = data.features.col(order[k]);
        y[k - start] = data.labels[order[k]];
      }
      const auto step = xent_loss_and_gradient(net, head, x, y);
      net_opt.step(net, step.grad_net);
      head_opt.step(head, step.grad_head);
    }
    if (on_epoch) on_epoch(epoch, net);
  }
  return net;
}

}  // namespace

EmbeddingNet train_embedding_triplet(EmbeddingNet net, const LabeledSamples& data, const TripletConfig& cfg,
                                     const EpochCallback& on_epoch, MiningStats* stats) {
  cfg.validate();
  check_trainable(data);
  if (data.features.rows() != net.input_dim()) throw DimensionError("triplet training: input dim mismatch");
  if (count_possible_triplets(class_sizes(data.labels)) == 0)
    throw DomainError("triplet training needs two classes and a class with two samples; no triplets exist");
  return run_triplet_epochs(std::move(net), data, cfg, cfg.epochs, cfg.learning_rate, cfg.seed, on_epoch,
                            stats);
}

EmbeddingNet train_embedding_xent(EmbeddingNet net, const LabeledSamples& data, const TripletConfig& cfg,
                                  std::optional<DenseNet<double>> head, const EpochCallback& on_epoch) {
  cfg.validate();
  check_trainable(data);
  if (data.features.rows() != net.input_dim()) throw DimensionError("xent training: input dim mismatch");
  const int k = data.num_classes();
  if (class_sizes(data.labels).size() < 2) throw DomainError("cross-entropy training needs two classes");
  if (!head) head = make_head(net.output_dim(), k, cfg.seed);
  if (head->input_dim() != net.output_dim() || head->output_dim() < k)
    throw DimensionError("xent training: head shape does not match net and labels");
  return run_xent_epochs(std::move(net), std::move(*head), data, cfg, cfg.epochs, cfg.learning_rate, cfg.seed,
                         on_epoch);
}

int finetune_epochs(const TripletConfig& cfg) {
  return static_cast<int>(std::ceil(cfg.finetune_epoch_fraction * cfg.epochs - 1e-9));
}

EmbeddingNet fine_tune(EmbeddingNet net, const LabeledSamples& data, const TripletConfig& cfg,
                       EmbeddingLoss loss) {
  cfg.validate();
  check_trainable(data);
  const int epochs = finetune_epochs(cfg);
  if (epochs == 0) return net;
  const double lr = cfg.learning_rate * cfg.finetune_lr_decay;
  const std::uint64_t seed = mix_seed(cfg.seed, 0xF1AE);
  if (loss == EmbeddingLoss::CrossEntropy) {
    if (class_sizes(data.labels).size() < 2) throw DomainError("cross-entropy fine-tuning needs two classes");
    auto head = make_head(net.output_dim(), data.num_classes(), seed);
    return run_xent_epochs(std::move(net), std::move(head), data, cfg, epochs, lr, seed, {});
  }
  if (count_possible_triplets(class_sizes(data.labels)) == 0)
    throw DomainError("triplet fine-tuning: no triplets exist in the labeled set");
  const auto eval = evaluation_triplets(data.labels, cfg.eval_triplet_limit, seed);
  EmbeddingNet best = net;
  double best_loss = mean_triplet_loss(net, data.features, eval, cfg.margin);
  run_triplet_epochs(std::move(net), data, cfg, epochs, lr, seed,
                     [&](int, const EmbeddingNet& current) {
                       const double l = mean_triplet_loss(current, data.features, eval, cfg.margin);
                       if (l < best_loss) {
                         best_loss = l;
                         best = current;
                       }
                     },
                     nullptr);
  return best;
}

}  // namespace traplab
