#include "traplab/session.hpp"
#include "traplab/synthetic.hpp"

#include "test_util.hpp"

#include <set>

using namespace traplab;

namespace {

Clock zero_clock() {
  return [] { return 0.0; };
}

PoolData mixture(Index pool, Index holdout, std::uint64_t seed = 0) {
  MixtureConfig m;
  m.classes = 4;
  m.dim = 4;
  m.pool_size = pool;
  m.holdout_size = holdout;
  m.seed = seed;
  return make_gaussian_mixture(m);
}

// Tiny models so that long schedules stay fast.
LoopConfig cheap_config() {
  LoopConfig cfg;
  cfg.architecture = {{4}, 3, Activation::Relu, 1.0};
  cfg.embedding.epochs = 1;
  cfg.embedding.eval_triplet_limit = 500;
  cfg.classifier.epochs = 1;
  cfg.classifier_hidden = 4;
  cfg.strategy = StrategyKind::Random;
  return cfg;
}

LoopConfig small_config(StrategyKind strategy = StrategyKind::KCenter) {
  LoopConfig cfg;
  cfg.initial_random = 20;
  cfg.batch_size = 10;
  cfg.finetune_interval = 20;
  cfg.finetune_start = 40;
  cfg.budget = 60;
  cfg.strategy = strategy;
  cfg.seed = 3;
  cfg.architecture = {{8}, 4, Activation::Relu, 1.0};
  cfg.embedding.epochs = 4;
  cfg.classifier.epochs = 5;
  cfg.classifier_hidden = 8;
  return cfg;
}

class FailingOracle : public Oracle {
 public:
  std::vector<int> label(const std::vector<std::string>&) override { throw std::runtime_error("oracle offline"); }
  std::string_view kind() const override { return "failing"; }
};

}  // namespace

TEST_SUITE("session") {
  TEST_CASE("default schedule: cadence, fine-tunes and curve length") {
    const PoolData data = mixture(6200, 0);
    LoopConfig cfg = cheap_config();
    cfg.budget = 6100;
    Session s = Session::create(make_session_data(data), cfg, std::nullopt, zero_clock());
    SimulatedOracle oracle(*data.truth, *data.classes);
    CHECK(s.pending().size() == 1000);
    for (Index k = 0; s.phase() != Phase::Done; ++k) {
      s.step(oracle);
      CHECK(s.labels_acquired() == 1000 + 100 * k);
    }
    CHECK(s.finetune_events() == std::vector<Index>{2000, 4000, 6000});
    CHECK(s.history().size() == (6100 - 1000) / 100 + 1);
    CHECK(s.history().front().labels == 1000);
    CHECK(s.history().back().labels == 6100);
    CHECK(std::isnan(s.history().back().accuracy));
  }

  TEST_CASE("fine-tune predicate") {
    const LoopConfig cfg;
    for (const Index l : {1000, 1100, 1900, 2100, 3000}) CHECK_FALSE(finetune_due(cfg, l));
    for (const Index l : {2000, 4000, 6000, 28000}) CHECK(finetune_due(cfg, l));
    LoopConfig off = cfg;
    off.finetune = false;
    CHECK_FALSE(finetune_due(off, 2000));
  }

  TEST_CASE("curve length follows the budget arithmetic") {
    const PoolData data = mixture(1500, 0);
    LoopConfig cfg = cheap_config();
    cfg.budget = 1400;
    CHECK(run_simulation(make_session_data(data), *data.truth, cfg, std::nullopt, zero_clock()).size() == 5);
    cfg.budget = 1000;
    CHECK(run_simulation(make_session_data(data), *data.truth, cfg, std::nullopt, zero_clock()).size() == 1);
    // A final partial batch takes the remaining budget.
    cfg.budget = 1250;
    const auto curve = run_simulation(make_session_data(data), *data.truth, cfg, std::nullopt, zero_clock());
    CHECK(curve.size() == 4);
    CHECK(curve.back().labels == 1250);
  }

  TEST_CASE("strategies change which items, never how many") {
    const PoolData data = mixture(300, 50);
    std::vector<Index> cadence;
    for (const auto kind : kAllStrategies) {
      Session s = Session::create(make_session_data(data), small_config(kind), std::nullopt, zero_clock());
      SimulatedOracle oracle(*data.truth, *data.classes);
      s.run(oracle);
      std::vector<Index> labels;
      for (const auto& p : s.history()) labels.push_back(p.labels);
      if (cadence.empty()) cadence = labels;
      CHECK(labels == cadence);
      // No item is queried twice.
      std::set<Index> seen;
      for (const auto& r : s.audit()) CHECK(seen.insert(r.index).second);
      CHECK(static_cast<Index>(seen.size()) == s.labels_acquired());
    }
    CHECK(cadence == std::vector<Index>{20, 30, 40, 50, 60});
  }

  TEST_CASE("runs stop when the pool is exhausted") {
    const PoolData data = mixture(45, 10);
    LoopConfig cfg = small_config(StrategyKind::Margin);
    cfg.budget = 100;
    Session s = Session::create(make_session_data(data), cfg, std::nullopt, zero_clock());
    SimulatedOracle oracle(*data.truth, *data.classes);
    s.run(oracle);
    CHECK(s.labels_acquired() == 45);
    CHECK(s.unlabeled().empty());
    CHECK(s.history().back().labels == 45);
  }

  TEST_CASE("identical seeds give identical sessions") {
    const PoolData data = mixture(300, 50);
    const auto a = run_simulation(make_session_data(data), *data.truth, small_config(), std::nullopt, zero_clock());
    const auto b = run_simulation(make_session_data(data), *data.truth, small_config(), std::nullopt, zero_clock());
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].labels == b[i].labels);
      CHECK(a[i].accuracy == b[i].accuracy);
    }
    CHECK(format_curve_csv(a) == format_curve_csv(b));
    LoopConfig other = small_config();
    other.seed = 4;
    const auto c = run_simulation(make_session_data(data), *data.truth, other, std::nullopt, zero_clock());
    CHECK(format_curve_csv(c) != format_curve_csv(a));
  }

  TEST_CASE("save and load preserve the session exactly") {
    const PoolData data = mixture(300, 50);
    const auto session_data = make_session_data(data);
    SimulatedOracle oracle(*data.truth, *data.classes);
    Session s = Session::create(session_data, small_config(StrategyKind::InformativeDiverse), std::nullopt,
                                zero_clock());
    s.step(oracle);
    s.step(oracle);
    // Half-answered batch.
    const auto pending = s.pending();
    const auto truth = oracle.label(s.pending_ids());
    for (std::size_t k = 0; k < 4; ++k) s.record_label(pending[k], truth[k]);

    const std::string bytes = s.save();
    Session back = Session::load(bytes, session_data, zero_clock());
    CHECK(back.save() == bytes);
    CHECK(back.answers() == s.answers());

    s.run(oracle);
    back.run(oracle);
    CHECK(back.save() == s.save());
  }

  TEST_CASE("damaged or mismatched saves are rejected") {
    const PoolData data = mixture(100, 20);
    const auto session_data = make_session_data(data);
    Session s = Session::create(session_data, small_config(), std::nullopt, zero_clock());
    SimulatedOracle oracle(*data.truth, *data.classes);
    s.step(oracle);
    const std::string bytes = s.save();
    for (const std::size_t cut : {std::size_t{0}, std::size_t{1}, bytes.size() / 2, bytes.size() - 1})
      CHECK_THROWS_AS(Session::load(bytes.substr(0, cut), session_data), ParseError);
    const PoolData other = mixture(101, 20);
    CHECK_THROWS_AS(Session::load(bytes, make_session_data(other)), ValidationError);
  }

  TEST_CASE("a failing oracle leaves the session unchanged") {
    const PoolData data = mixture(100, 20);
    Session s = Session::create(make_session_data(data), small_config(), std::nullopt, zero_clock());
    SimulatedOracle good(*data.truth, *data.classes);
    s.step(good);
    const std::string before = s.save();
    FailingOracle bad;
    CHECK_THROWS(s.step(bad));
    CHECK(s.save() == before);

    std::map<std::string, std::string> partial = *data.truth;
    partial.erase(s.pending_ids().back());
    SimulatedOracle missing(partial, *data.classes);
    CHECK_THROWS_AS(s.step(missing), NotFoundError);
    CHECK(s.save() == before);
  }

  TEST_CASE("label recording rules") {
    const PoolData data = mixture(100, 20);
    Session s = Session::create(make_session_data(data), small_config(), std::nullopt, zero_clock());
    const Index item = s.pending().front();
    CHECK(s.record_label(item, 1) == RecordResult::Accepted);
    CHECK(s.record_label(item, 1) == RecordResult::Duplicate);
    CHECK_THROWS_AS(s.record_label(item, 2), ConflictError);
    CHECK_THROWS_AS(s.record_label(s.pending().back(), 9), ValidationError);
    CHECK_THROWS_AS(s.record_label(s.unlabeled().size() > 0 ? *std::find_if(s.unlabeled().begin(), s.unlabeled().end(), [&](Index i) {
                                      return std::find(s.pending().begin(), s.pending().end(), i) == s.pending().end();
                                    })
                                                            : 0,
                                   0),
                    NotFoundError);
    CHECK_FALSE(s.ready_to_commit());
    CHECK_THROWS(s.commit());
    CHECK(s.find_item(s.item_id(item)) == item);
    CHECK_FALSE(s.find_item("nope"));
  }

  TEST_CASE("pretrained embedding is used from the first step") {
    const PoolData data = mixture(200, 40);
    LoopConfig cfg = small_config(StrategyKind::KCenter);
    cfg.finetune = false;
    const auto net = make_embedding_net(4, cfg.architecture, 9);
    Session s = Session::create(make_session_data(data), cfg, EmbeddingCheckpoint{net, EmbeddingLoss::Triplet, {9}},
                                zero_clock());
    REQUIRE(s.embedding_net());
    CHECK(*s.embedding_net() == net);
    SimulatedOracle oracle(*data.truth, *data.classes);
    s.run(oracle);
    CHECK(*s.embedding_net() == net);
    CHECK(s.finetune_events().empty());
    const auto wrong = make_embedding_net(5, cfg.architecture, 9);
    CHECK_THROWS_AS(Session::create(make_session_data(data), cfg, EmbeddingCheckpoint{wrong, EmbeddingLoss::Triplet, {}}),
                    DimensionError);
  }

  TEST_CASE("config JSON round trip and strictness") {
    LoopConfig cfg = small_config(StrategyKind::MarginClusterMean);
    cfg.strategy_params.margin_tau = 0.3;
    cfg.classifier.warm_start = true;
    const auto back = loop_config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));
    CHECK(loop_config_from_json(nlohmann::json::object()).budget == 30000);
    CHECK_THROWS_AS(loop_config_from_json({{"budjet", 10}}), ValidationError);
    CHECK_THROWS_AS(loop_config_from_json({{"embedding", {{"marign", 1}}}}), ValidationError);
    CHECK_THROWS_AS(loop_config_from_json({{"batch_size", 30}}), ValidationError);
    CHECK_THROWS_AS(loop_config_from_json({{"budget", "many"}}), ValidationError);
  }

  TEST_CASE("curve and audit CSV formats") {
    const std::vector<CurvePoint> curve{{100, 0.25, 1.5}, {120, std::nan(""), 0}};
    CHECK(format_curve_csv(curve) == "labels,accuracy,wall_time_s\n100,0.25,1.5\n120,nan,0\n");
    const std::vector<SelectionRecord> audit{{0, StrategyKind::Random, 5, 0}, {1, StrategyKind::KCenter, 7, 2.5}};
    CHECK(format_selections_csv(audit) == "step,strategy,index,score\n0,random,5,0\n1,k-center,7,2.5\n");
  }
}
