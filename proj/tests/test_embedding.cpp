#include "traplab/embedding.hpp"

#include "test_util.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <tuple>

using namespace traplab;
using test::random_labels;
using test::random_matrix;

namespace {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b));
}

template <typename F>
double gradient_error(EmbeddingNet net, const EmbeddingNet& analytic, F f) {
  const double h = 1e-5;
  VectorXd params = net.flatten();
  const VectorXd grad = analytic.flatten();
  double worst = 0;
  for (Index k = 0; k < params.size(); ++k) {
    const double saved = params(k);
    params(k) = saved + h;
    net.unflatten(params);
    const double up = f(net);
    params(k) = saved - h;
    net.unflatten(params);
    const double down = f(net);
    params(k) = saved;
    const double numeric = (up - down) / (2 * h);
    if (std::abs(numeric) < 1e-9 && std::abs(grad(k)) < 1e-9) continue;
    worst = std::max(worst, relative_error(numeric, grad(k)));
  }
  return worst;
}

// Well-separated Gaussian blobs, one per class, in `dim` dimensions.
LabeledSamples blobs(int classes, int per_class, Index dim, double spread, Rng& rng) {
  LabeledSamples s;
  s.features.resize(dim, static_cast<Index>(classes) * per_class);
  const MatrixXd centers = random_matrix(dim, classes, rng, 3.0);
  for (int c = 0; c < classes; ++c)
    for (int k = 0; k < per_class; ++k) {
      const Index i = static_cast<Index>(c) * per_class + k;
      s.features.col(i) = centers.col(c) + random_matrix(dim, 1, rng, spread);
      s.labels.push_back(c);
    }
  return s;
}

// Fraction of samples whose nearest other sample shares its label.
double nearest_neighbor_accuracy(const MatrixXd& emb, const std::vector<int>& labels) {
  int hits = 0;
  for (Index i = 0; i < emb.cols(); ++i) {
    Index best = -1;
    double best_d = 0;
    for (Index j = 0; j < emb.cols(); ++j) {
      if (j == i) continue;
      const double d = (emb.col(i) - emb.col(j)).squaredNorm();
      if (best < 0 || d < best_d) {
        best = j;
        best_d = d;
      }
    }
    hits += labels[best] == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(emb.cols());
}

}  // namespace

TEST_SUITE("embedding") {
  TEST_CASE("triplet count closed form") {
    const std::vector<std::uint64_t> ten_by_hundred(10, 100);
    CHECK(count_possible_triplets(ten_by_hundred) == 89'100'000ULL);
    const std::vector<std::uint64_t> singletons{1, 1, 1};
    CHECK(count_possible_triplets(singletons) == 0);
    const std::vector<std::uint64_t> one_class{5};
    CHECK(count_possible_triplets(one_class) == 0);
  }

  TEST_CASE("triplet enumeration matches brute force") {
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
      const Index n = 1 + static_cast<Index>(uniform_index(rng, 12));
      const auto labels = random_labels(n, 1 + static_cast<int>(uniform_index(rng, 4)), rng);
      std::set<std::tuple<Index, Index, Index>> expect;
      for (Index a = 0; a < n; ++a)
        for (Index p = 0; p < n; ++p)
          for (Index q = 0; q < n; ++q)
            if (p != a && labels[p] == labels[a] && labels[q] != labels[a]) expect.insert({a, p, q});
      const auto got = evaluation_triplets(labels, 1'000'000, 0);
      std::set<std::tuple<Index, Index, Index>> got_set;
      for (const auto& t : got) got_set.insert({t.anchor, t.positive, t.negative});
      CHECK(got.size() == got_set.size());
      CHECK(got_set == expect);
      std::map<int, std::uint64_t> counts;
      for (const int l : labels) ++counts[l];
      std::vector<std::uint64_t> sizes;
      for (const auto& [l, c] : counts) sizes.push_back(c);
      CHECK(count_possible_triplets(sizes) == expect.size());
    }
  }

  TEST_CASE("sampled evaluation triplets are valid and seeded") {
    Rng rng(8);
    const auto labels = random_labels(300, 5, rng);
    const auto a = evaluation_triplets(labels, 1000, 42);
    CHECK(a.size() == 1000);
    for (const auto& t : a) {
      CHECK(t.anchor != t.positive);
      CHECK(labels[t.anchor] == labels[t.positive]);
      CHECK(labels[t.anchor] != labels[t.negative]);
    }
    CHECK(evaluation_triplets(labels, 1000, 42) == a);
  }

  TEST_CASE("negative candidates match a brute-force oracle") {
    Rng rng(5);
    int fallbacks = 0;
    int pairs = 0;
    for (int pool = 0; pool < 200; ++pool) {
      const Index n = 3 + static_cast<Index>(uniform_index(rng, 48));
      const MatrixXd emb = random_matrix(1 + static_cast<Index>(uniform_index(rng, 4)), n, rng);
      const auto labels = random_labels(n, 2 + static_cast<int>(uniform_index(rng, 4)), rng);
      const double margin = 0.1 + uniform01(rng);
      for (Index a = 0; a < n; ++a)
        for (Index p = 0; p < n; ++p) {
          if (p == a || labels[p] != labels[a]) continue;
          std::vector<Index> semi, hard, all;
          const double dap = std::sqrt((emb.col(a) - emb.col(p)).squaredNorm());
          for (Index q = 0; q < n; ++q) {
            if (labels[q] == labels[a]) continue;
            const double dan = std::sqrt((emb.col(a) - emb.col(q)).squaredNorm());
            if (dan <= dap) {
              hard.push_back(q);
              all.push_back(q);
            } else if (dan < dap + margin) {
              semi.push_back(q);
              all.push_back(q);
            }
          }
          REQUIRE(negative_candidates(a, p, emb, labels, margin, MiningStrategy::SemiHardOrHard) == all);
          REQUIRE(negative_candidates(a, p, emb, labels, margin, MiningStrategy::SemiHard) ==
                  (semi.empty() ? hard : semi));
          fallbacks += semi.empty() && !hard.empty();
          ++pairs;
        }
    }
    CHECK(pairs > 1000);
    CHECK(fallbacks > 0);
  }

  TEST_CASE("mine_semihard draws from the full non-easy set") {
    // Anchor at 0, positive at 1: negatives at 0.5 (hard) and 1.1 (semi-hard)
    // are both eligible; the one at 5 is easy.
    MatrixXd emb(1, 5);
    emb << 0, 1, 0.5, 1.1, 5;
    const std::vector<int> labels{0, 0, 1, 1, 1};
    Rng rng(3);
    std::map<Index, int> hits;
    for (int k = 0; k < 2000; ++k) ++hits[mine_semihard(0, emb, labels, 0.3, rng)->negative];
    CHECK(hits.size() == 2);
    CHECK(hits[2] > 800);
    CHECK(hits[3] > 800);
  }

  TEST_CASE("mined triplets are never easy") {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
      const MatrixXd emb = random_matrix(3, 40, rng);
      const auto labels = random_labels(40, 4, rng);
      for (Index a = 0; a < 40; ++a) {
        const auto t = mine_semihard(a, emb, labels, 0.3, rng);
        if (!t) continue;
        CHECK(t->anchor == a);
        CHECK(t->positive != a);
        CHECK(labels[t->positive] == labels[a]);
        CHECK(labels[t->negative] != labels[a]);
        const double dap = distance(emb.col(a), emb.col(t->positive));
        const double dan = distance(emb.col(a), emb.col(t->negative));
        CHECK(classify_triplet(dap, dan, 0.3) != TripletKind::Easy);
      }
    }
  }

  TEST_CASE("mining skips anchors without a positive or a candidate") {
    Rng rng(1);
    MatrixXd emb(1, 3);
    emb << 0, 0.1, 100;
    const std::vector<int> labels{0, 0, 1};
    MiningStats stats;
    // Only negative is far beyond the margin: every candidate would be easy.
    CHECK_FALSE(mine_triplet(0, emb, labels, 0.2, MiningStrategy::SemiHard, rng, &stats));
    CHECK_FALSE(mine_triplet(2, emb, labels, 0.2, MiningStrategy::SemiHard, rng, &stats));
    CHECK(stats.skipped == 2);
  }

  TEST_CASE("easy triplets contribute no gradient") {
    Rng rng(9);
    auto net = make_embedding_net(2, {{4}, 2, Activation::Tanh, 1.0}, 3);
    MatrixXd x(2, 3);
    x << 0, 0.01, 50, 0, 0, 50;
    const std::vector<Triplet> ts{{0, 1, 2}};
    const auto emb = embed(net, x);
    REQUIRE(classify_triplet(distance(emb.col(0), emb.col(1)), distance(emb.col(0), emb.col(2)), 0.01) ==
            TripletKind::Easy);
    const auto lg = triplet_loss_and_gradient(net, x, ts, 0.01);
    CHECK(lg.loss == 0.0);
    CHECK(lg.grad.flatten().isZero(0));
  }

  TEST_CASE("triplet gradient matches finite differences") {
    Rng rng(10);
    int checked = 0;
    while (checked < 50) {
      const auto net = make_embedding_net(3, {{5}, 4, Activation::Tanh, 1.0}, rng());
      const MatrixXd x = random_matrix(3, 8, rng);
      const auto labels = random_labels(8, 3, rng);
      auto ts = evaluation_triplets(labels, 6, rng());
      if (ts.empty()) continue;
      const double margin = 0.5;
      const MatrixXd emb = embed(net, x);
      // Stay off the hinge so the loss is differentiable at this point.
      const bool smooth = std::all_of(ts.begin(), ts.end(), [&](const Triplet& t) {
        const double dap = distance(emb.col(t.anchor), emb.col(t.positive));
        const double dan = distance(emb.col(t.anchor), emb.col(t.negative));
        return std::abs(dap + margin - dan) > 1e-3 && dap > 1e-6 && dan > 1e-6;
      });
      if (!smooth) continue;
      const auto lg = triplet_loss_and_gradient(net, x, ts, margin);
      CHECK(lg.loss == doctest::Approx(mean_triplet_loss(net, x, ts, margin)));
      CHECK(gradient_error(net, lg.grad, [&](const EmbeddingNet& n) { return mean_triplet_loss(n, x, ts, margin); }) <
            1e-4);
      ++checked;
    }
  }

  TEST_CASE("cross-entropy gradient matches finite differences") {
    Rng rng(12);
    for (int instance = 0; instance < 50; ++instance) {
      const auto net = make_embedding_net(3, {{5}, 4, Activation::Tanh, 1.0}, rng());
      const auto head = DenseNet<double>::random({4, 3}, Activation::Identity, rng);
      const MatrixXd x = random_matrix(3, 6, rng);
      const auto labels = random_labels(6, 3, rng);
      const auto lg = xent_loss_and_gradient(net, head, x, labels);
      const auto loss_of = [&](const EmbeddingNet& n, const DenseNet<double>& h) {
        const MatrixXd p = softmax(h.forward(n.forward(x)));
        double sum = 0;
        for (Index i = 0; i < x.cols(); ++i) sum += cross_entropy(p.col(i), labels[i]);
        return sum / static_cast<double>(x.cols());
      };
      CHECK(lg.loss == doctest::Approx(loss_of(net, head)));
      CHECK(gradient_error(net, lg.grad_net, [&](const EmbeddingNet& n) { return loss_of(n, head); }) < 1e-4);
      CHECK(gradient_error(head, lg.grad_head, [&](const DenseNet<double>& h) { return loss_of(net, h); }) < 1e-4);
    }
  }

  TEST_CASE("triplet training separates overlapping classes") {
    Rng rng(14);
    LabeledSamples data = blobs(4, 25, 6, 2.5, rng);
    // Scramble the class-carrying directions with heavy noise dimensions.
    data.features.conservativeResize(16, Eigen::NoChange);
    data.features.bottomRows(10) = random_matrix(10, data.size(), rng, 4.0);
    const EmbeddingArchitecture arch{{32}, 8, Activation::Relu, 1.0};
    const auto net = make_embedding_net(16, arch, 1);
    TripletConfig cfg;
    cfg.epochs = 60;
    cfg.batch_size = 25;
    cfg.learning_rate = 3e-3;
    const auto eval = evaluation_triplets(data.labels, 5000, 2);
    const double before = mean_triplet_loss(net, data.features, eval, cfg.margin);
    const auto trained = train_embedding_triplet(net, data, cfg);
    const double after = mean_triplet_loss(trained, data.features, eval, cfg.margin);
    CHECK(after < 0.5 * before);
    CHECK(nearest_neighbor_accuracy(embed(trained, data.features), data.labels) >
          nearest_neighbor_accuracy(data.features, data.labels));
  }

  TEST_CASE("cross-entropy embedding training reduces loss") {
    Rng rng(15);
    const LabeledSamples data = blobs(3, 20, 5, 1.5, rng);
    const auto net = make_embedding_net(5, {{16}, 8, Activation::Relu, 1.0}, 4);
    TripletConfig cfg;
    cfg.epochs = 30;
    std::vector<int> epochs_seen;
    const auto trained = train_embedding_xent(net, data, cfg, std::nullopt,
                                              [&](int e, const EmbeddingNet&) { epochs_seen.push_back(e); });
    CHECK(epochs_seen.size() == 30);
    CHECK(trained.all_finite());
    CHECK_FALSE(trained == net);
  }

  TEST_CASE("training is deterministic under a seed") {
    Rng rng(16);
    const LabeledSamples data = blobs(3, 10, 4, 1.0, rng);
    const auto net = make_embedding_net(4, {{8}, 4, Activation::Relu, 1.0}, 5);
    TripletConfig cfg;
    cfg.epochs = 5;
    cfg.seed = 77;
    CHECK(train_embedding_triplet(net, data, cfg) == train_embedding_triplet(net, data, cfg));
    cfg.seed = 78;
    const auto other = train_embedding_triplet(net, data, cfg);
    cfg.seed = 77;
    CHECK_FALSE(other == train_embedding_triplet(net, data, cfg));
  }

  TEST_CASE("fine-tuning never increases the labeled-set loss") {
    Rng rng(17);
    for (int trial = 0; trial < 5; ++trial) {
      const LabeledSamples data = blobs(3, 10, 4, 3.0, rng);
      const auto net = make_embedding_net(4, {{8}, 4, Activation::Relu, 1.0}, rng());
      TripletConfig cfg;
      cfg.epochs = 8;
      cfg.learning_rate = 0.05;  // large steps make a regression likely
      cfg.seed = rng();
      // 30 samples in 3 classes give 5400 triplets, so all are evaluated.
      const auto eval = evaluation_triplets(data.labels, cfg.eval_triplet_limit, 0);
      const double before = mean_triplet_loss(net, data.features, eval, cfg.margin);
      const auto tuned = fine_tune(net, data, cfg, EmbeddingLoss::Triplet);
      CHECK(mean_triplet_loss(tuned, data.features, eval, cfg.margin) <= before);
      CHECK(fine_tune(net, data, cfg, EmbeddingLoss::Triplet) == tuned);
    }
  }

  TEST_CASE("fine-tune epoch budget") {
    TripletConfig cfg;
    CHECK(finetune_epochs(cfg) == 5);
    cfg.epochs = 3;
    CHECK(finetune_epochs(cfg) == 1);
    cfg.finetune_epoch_fraction = 0;
    CHECK(finetune_epochs(cfg) == 0);
  }

  TEST_CASE("training rejects data without triplets") {
    const auto net = make_embedding_net(2, {{3}, 2, Activation::Relu, 1.0}, 0);
    LabeledSamples one_class{MatrixXd::Zero(2, 4), {0, 0, 0, 0}};
    CHECK_THROWS_AS(train_embedding_triplet(net, one_class, {}), DomainError);
    CHECK_THROWS_AS(train_embedding_xent(net, one_class, {}), DomainError);
    LabeledSamples wrong_dim{MatrixXd::Zero(3, 4), {0, 0, 1, 1}};
    CHECK_THROWS_AS(train_embedding_triplet(net, wrong_dim, {}), DimensionError);
    TripletConfig bad;
    bad.margin = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }

  TEST_CASE("loss and mining names parse") {
    CHECK(parse_embedding_loss("triplet") == EmbeddingLoss::Triplet);
    CHECK(parse_embedding_loss("xent") == EmbeddingLoss::CrossEntropy);
    CHECK_THROWS_AS(parse_embedding_loss("tripplet"), ValidationError);
    CHECK(parse_mining_strategy(to_string(MiningStrategy::SemiHardOrHard)) == MiningStrategy::SemiHardOrHard);
  }
}
