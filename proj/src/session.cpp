#include "traplab/session.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

namespace traplab {

using nlohmann::json;

namespace {

constexpr int kSessionVersion = 1;

// Seed tags for the independent streams a session derives from its seed.
constexpr std::uint64_t kEmbeddingTag = 0xE3BED;
constexpr std::uint64_t kFinetuneTag = 0xF1E7;
constexpr std::uint64_t kClassifierTag = 0xC1A55;

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_or_nan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

// Reads every key of `j` through `fields`, rejecting keys it does not know.
template <typename Fn>
void read_object(const json& j, std::string_view what, Fn&& fields) {
  if (!j.is_object()) throw ValidationError(std::string(what) + " must be an object");
  for (const auto& [key, value] : j.items())
    if (!fields(key, value)) throw ValidationError("unknown " + std::string(what) + " key '" + key + "'");
}

}  // namespace

void LoopConfig::validate() const {
  if (initial_random < 1) throw ValidationError("initial_random must be at least 1");
  if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
  if (finetune_interval < 1) throw ValidationError("finetune_interval must be at least 1");
  if (finetune_interval % batch_size != 0)
    throw ValidationError("finetune_interval (" + std::to_string(finetune_interval) +
                          ") must be divisible by batch_size (" + std::to_string(batch_size) + ")");
  if (finetune_start < 0) throw ValidationError("finetune_start must be non-negative");
  if (budget < initial_random)
    throw ValidationError("budget (" + std::to_string(budget) + ") must be at least initial_random (" +
                          std::to_string(initial_random) + ")");
  if (classifier_hidden < 1) throw ValidationError("classifier_hidden must be at least 1");
  if (architecture.output_dim < 1) throw ValidationError("embedding dimension must be at least 1");
  for (const Index h : architecture.hidden)
    if (h < 1) throw ValidationError("embedding hidden widths must be at least 1");
  if (!(architecture.init_scale > 0)) throw ValidationError("embedding init scale must be positive");
  if (!(strategy_params.margin_tau > 0)) throw ValidationError("margin_tau must be positive");
  if (strategy_params.clusters < 0) throw ValidationError("clusters must be non-negative");
  if (strategy_params.kmeans_max_iterations < 1) throw ValidationError("kmeans_max_iterations must be at least 1");
  if (strategy_params.agglomerative_limit < 2) throw ValidationError("agglomerative_limit must be at least 2");
  embedding.validate();
  classifier.validate();
}

json to_json(const LoopConfig& c) {
  return {{"initial_random", c.initial_random},
          {"batch_size", c.batch_size},
          {"finetune_interval", c.finetune_interval},
          {"finetune_start", c.finetune_start},
          {"budget", c.budget},
          {"strategy", to_string(c.strategy)},
          {"seed", c.seed},
          {"loss", to_string(c.loss)},
          {"finetune", c.finetune},
          {"classifier_hidden", c.classifier_hidden},
          {"source", to_string(c.source)},
          {"strategy_params",
           {{"margin_tau", c.strategy_params.margin_tau},
            {"clusters", c.strategy_params.clusters},
            {"kmeans_max_iterations", c.strategy_params.kmeans_max_iterations},
            {"agglomerative_limit", c.strategy_params.agglomerative_limit}}},
          {"embedding",
           {{"margin", c.embedding.margin},
            {"mining", to_string(c.embedding.mining)},
            {"learning_rate", c.embedding.learning_rate},
            {"epochs", c.embedding.epochs},
            {"batch_size", c.embedding.batch_size},
            {"finetune_epoch_fraction", c.embedding.finetune_epoch_fraction},
            {"finetune_lr_decay", c.embedding.finetune_lr_decay},
            {"eval_triplet_limit", c.embedding.eval_triplet_limit}}},
          {"classifier",
           {{"learning_rate", c.classifier.learning_rate},
            {"epochs", c.classifier.epochs},
            {"batch_size", c.classifier.batch_size},
            {"init_scale", c.classifier.init_scale},
            {"warm_start", c.classifier.warm_start}}},
          {"architecture",
           {{"hidden", c.architecture.hidden},
            {"output_dim", c.architecture.output_dim},
            {"activation", to_string(c.architecture.activation)},
            {"init_scale", c.architecture.init_scale}}}};
}

LoopConfig loop_config_from_json(const json& j) {
  LoopConfig c;
  try {
    read_object(j, "config", [&](const std::string& k, const json& v) {
      if (k == "initial_random") c.initial_random = v.get<Index>();
      else if (k == "batch_size") c.batch_size = v.get<Index>();
      else if (k == "finetune_interval") c.finetune_interval = v.get<Index>();
      else if (k == "finetune_start") c.finetune_start = v.get<Index>();
      else if (k == "budget") c.budget = v.get<Index>();
      else if (k == "strategy") c.strategy = parse_strategy(v.get<std::string>());
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "loss") c.loss = parse_embedding_loss(v.get<std::string>());
      else if (k == "finetune") c.finetune = v.get<bool>();
      else if (k == "classifier_hidden") c.classifier_hidden = v.get<Index>();
      else if (k == "source") c.source = parse_feature_source(v.get<std::string>());
      else if (k == "strategy_params")
        read_object(v, "strategy_params", [&](const std::string& k2, const json& v2) {
          auto& p = c.strategy_params;
          if (k2 == "margin_tau") p.margin_tau = v2.get<double>();
          else if (k2 == "clusters") p.clusters = v2.get<int>();
          else if (k2 == "kmeans_max_iterations") p.kmeans_max_iterations = v2.get<int>();
          else if (k2 == "agglomerative_limit") p.agglomerative_limit = v2.get<Index>();
          else return false;
          return true;
        });
      else if (k == "embedding")
        read_object(v, "embedding", [&](const std::string& k2, const json& v2) {
          auto& e = c.embedding;
          if (k2 == "margin") e.margin = v2.get<double>();
          else if (k2 == "mining") e.mining = parse_mining_strategy(v2.get<std::string>());
          else if (k2 == "learning_rate") e.learning_rate = v2.get<double>();
          else if (k2 == "epochs") e.epochs = v2.get<int>();
          else if (k2 == "batch_size") e.batch_size = v2.get<int>();
          else if (k2 == "finetune_epoch_fraction") e.finetune_epoch_fraction = v2.get<double>();
          else if (k2 == "finetune_lr_decay") e.finetune_lr_decay = v2.get<double>();
          else if (k2 == "eval_triplet_limit") e.eval_triplet_limit = v2.get<Index>();
          else return false;
          return true;
        });
      else if (k == "classifier")
        read_object(v, "classifier", [&](const std::string& k2, const json& v2) {
          auto& t = c.classifier;
          if (k2 == "learning_rate") t.learning_rate = v2.get<double>();
          else if (k2 == "epochs") t.epochs = v2.get<int>();
          else if (k2 == "batch_size") t.batch_size = v2.get<int>();
          else if (k2 == "init_scale") t.init_scale = v2.get<double>();
          else if (k2 == "warm_start") t.warm_start = v2.get<bool>();
          else return false;
          return true;
        });
      else if (k == "architecture")
        read_object(v, "architecture", [&](const std::string& k2, const json& v2) {
          auto& a = c.architecture;
          if (k2 == "hidden") a.hidden = v2.get<std::vector<Index>>();
          else if (k2 == "output_dim") a.output_dim = v2.get<Index>();
          else if (k2 == "activation") a.activation = parse_activation(v2.get<std::string>());
          else if (k2 == "init_scale") a.init_scale = v2.get<double>();
          else return false;
          return true;
        });
      else return false;
      return true;
    });
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

bool finetune_due(const LoopConfig& cfg, Index labels) {
  return cfg.finetune && labels >= cfg.finetune_start && labels % cfg.finetune_interval == 0;
}

std::string format_curve_csv(const std::vector<CurvePoint>& curve) {
  std::string out = "labels,accuracy,wall_time_s\n";
  for (const auto& p : curve)
    out += std::to_string(p.labels) + "," + format_double(p.accuracy) + "," + format_double(p.wall_time) + "\n";
  return out;
}

std::string format_selections_csv(const std::vector<SelectionRecord>& audit) {
  std::string out = "step,strategy,index,score\n";
  for (const auto& r : audit)
    out += std::to_string(r.step) + "," + std::string(to_string(r.strategy)) + "," + std::to_string(r.index) +
           "," + format_double(r.score) + "\n";
  return out;
}

SimulatedOracle::SimulatedOracle(const std::map<std::string, std::string>& truth, const ClassTable& classes) {
  for (const auto& [id, name] : truth) labels_.emplace(id, classes.index_of(name));
}

std::vector<int> SimulatedOracle::label(const std::vector<std::string>& ids) {
  std::vector<int> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = labels_.find(id);
    if (it == labels_.end()) throw NotFoundError("no ground truth for '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

SessionData make_session_data(const PoolData& data) {
  SessionData out;
  out.pool = std::make_shared<const FeatureTable>(data.pool);
  if (data.classes) {
    out.classes = *data.classes;
  } else if (data.truth) {
    out.classes = ClassTable::from_labels({data.truth->begin(), data.truth->end()});
  } else {
    throw ValidationError("pool has neither a class table nor ground truth");
  }
  if (data.holdout) {
    if (!data.truth) throw ValidationError("holdout present but no ground truth to label it");
    out.holdout = std::make_shared<const LabeledSamples>(attach_labels(*data.holdout, *data.truth, out.classes));
  }
  return out;
}

std::uint64_t pool_fingerprint(const FeatureTable& pool) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](unsigned char b) {
    h ^= b;
    h *= 0x100000001b3ULL;
  };
  for (const auto& id : pool.ids) {
    for (const char ch : id) mix(static_cast<unsigned char>(ch));
    mix(0);
  }
  for (int shift = 0; shift < 64; shift += 8) mix(static_cast<unsigned char>(pool.features.rows() >> shift));
  return h;
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::AwaitingLabels: return "awaiting_labels";
    case Phase::Training: return "training";
    case Phase::Done: return "done";
  }
  return "done";
}

Clock steady_clock_seconds() {
  return [] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
  };
}

void Session::attach(SessionData data) {
  if (!data.pool) throw ValidationError("session needs a pool");
  if (data.pool->size() == 0) throw ValidationError("pool is empty");
  if (data.classes.size() < 1) throw ValidationError("class table is empty");
  if (data.holdout && data.holdout->features.rows() != data.pool->features.rows())
    throw DimensionError("holdout feature dimension differs from the pool");
  auto index = std::make_shared<std::unordered_map<std::string, Index>>();
  for (Index i = 0; i < data.pool->size(); ++i)
    if (!index->emplace(data.pool->ids[i], i).second)
      throw ValidationError("duplicate pool id '" + data.pool->ids[i] + "'");
  id_index_ = std::move(index);
  data_ = std::move(data);
}

Session Session::create(SessionData data, LoopConfig cfg, std::optional<EmbeddingCheckpoint> pretrained,
                        Clock clock) {
  cfg.validate();
  Session s;
  s.attach(std::move(data));
  const Index n = s.data_.pool->size();
  if (n < cfg.initial_random)
    throw ValidationError("pool has " + std::to_string(n) + " items, fewer than initial_random (" +
                          std::to_string(cfg.initial_random) + ")");
  if (pretrained) {
    if (pretrained->net.input_dim() != s.data_.pool->features.rows())
      throw DimensionError("pretrained embedding expects " + std::to_string(pretrained->net.input_dim()) +
                           " inputs, pool features have " + std::to_string(s.data_.pool->features.rows()));
    s.embedding_ = std::move(pretrained->net);
    s.embedding_lineage_ = std::move(pretrained->seed_lineage);
    s.refresh_embeddings();
  }
  s.cfg_ = std::move(cfg);
  s.clock_ = std::move(clock);
  s.rng_.seed(s.cfg_.seed);
  s.unlabeled_.resize(n);
  for (Index i = 0; i < n; ++i) s.unlabeled_[i] = i;

  SelectionContext ctx;
  ctx.unlabeled = s.unlabeled_;
  ctx.probabilities = MatrixXd(0, n);
  for (const auto& pick : select_random(ctx, s.cfg_.initial_random, s.rng_)) {
    s.pending_.push_back(pick.index);
    s.audit_.push_back({0, StrategyKind::Random, pick.index, pick.score});
  }
  return s;
}

Phase Session::phase() const { return pending_.empty() ? Phase::Done : Phase::AwaitingLabels; }

std::vector<Index> Session::unanswered() const {
  std::vector<Index> out;
  for (const Index i : pending_)
    if (!answers_.contains(i)) out.push_back(i);
  return out;
}

std::vector<std::string> Session::pending_ids() const {
  std::vector<std::string> out;
  for (const Index i : pending_) out.push_back(item_id(i));
  return out;
}

std::optional<Index> Session::find_item(std::string_view id) const {
  const auto it = id_index_->find(std::string(id));
  if (it == id_index_->end()) return std::nullopt;
  return it->second;
}

RecordResult Session::check_label(Index item, int label) const {
  if (std::find(pending_.begin(), pending_.end(), item) == pending_.end())
    throw NotFoundError("item " + std::to_string(item) + " is not in the pending batch");
  if (label < 0 || label >= data_.classes.size())
    throw ValidationError("class index " + std::to_string(label) + " outside the class table");
  const auto it = answers_.find(item);
  if (it == answers_.end()) return RecordResult::Accepted;
  if (it->second == label) return RecordResult::Duplicate;
  throw ConflictError("item '" + item_id(item) + "' already labeled '" + data_.classes.name(it->second) + "'");
}

RecordResult Session::record_label(Index item, int label) {
  const RecordResult result = check_label(item, label);
  if (result == RecordResult::Accepted) answers_.emplace(item, label);
  return result;
}

bool Session::ready_to_commit() const { return !pending_.empty() && answers_.size() == pending_.size(); }

LabeledSamples Session::labeled_samples() const {
  LabeledSamples out;
  out.features.resize(data_.pool->features.rows(), labels_acquired());
  Index k = 0;
  for (const auto& [i, label] : labeled_) {
    out.features.col(k++) = data_.pool->features.col(i);
    out.labels.push_back(label);
  }
  return out;
}

void Session::refresh_embeddings() {
  pool_embedded_ = std::make_shared<const MatrixXd>(embed(*embedding_, data_.pool->features));
  holdout_embedded_ = data_.holdout ? embed(*embedding_, data_.holdout->features) : MatrixXd();
}

void Session::commit() {
  Session next = *this;
  next.commit_in_place();
  *this = std::move(next);
}

void Session::commit_in_place() {
  if (pending_.empty()) throw ConflictError("session is done; nothing to commit");
  if (!ready_to_commit())
    throw ConflictError(std::to_string(pending_.size() - answers_.size()) + " pending items are unanswered");
  const double started = clock_();

  for (const auto& [i, label] : answers_) labeled_.emplace(i, label);
  std::erase_if(unlabeled_, [this](Index i) { return answers_.contains(i); });
  pending_.clear();
  answers_.clear();

  const Index labels = labels_acquired();
  const LabeledSamples raw = labeled_samples();
  TripletConfig ecfg = cfg_.embedding;
  if (!embedding_) {
    ecfg.seed = mix_seed(cfg_.seed, kEmbeddingTag);
    auto net = make_embedding_net(raw.features.rows(), cfg_.architecture, ecfg.seed);
    embedding_ = cfg_.loss == EmbeddingLoss::Triplet ? train_embedding_triplet(std::move(net), raw, ecfg)
                                                      : train_embedding_xent(std::move(net), raw, ecfg);
    embedding_lineage_.push_back(ecfg.seed);
    refresh_embeddings();
  } else if (finetune_due(cfg_, labels)) {
    ecfg.seed = mix_seed(mix_seed(cfg_.seed, kFinetuneTag), static_cast<std::uint64_t>(labels));
    embedding_ = fine_tune(std::move(*embedding_), raw, ecfg, cfg_.loss);
    embedding_lineage_.push_back(ecfg.seed);
    finetune_events_.push_back(labels);
    refresh_embeddings();
  }

  LabeledSamples embedded;
  embedded.features.resize(pool_embedded_->rows(), labels);
  Index k = 0;
  for (const auto& [i, label] : labeled_) {
    embedded.features.col(k++) = pool_embedded_->col(i);
    embedded.labels.push_back(label);
  }
  TrainConfig ccfg = cfg_.classifier;
  ccfg.seed = mix_seed(mix_seed(cfg_.seed, kClassifierTag), static_cast<std::uint64_t>(step_));
  const bool warm = ccfg.warm_start && classifier_ && classifier_->input_dim() == embedded.features.rows();
  MlpClassifier start = warm ? *classifier_
                             : MlpClassifier(embedded.features.rows(), data_.classes.size(), cfg_.classifier_hidden,
                                             ccfg.seed, ccfg.init_scale);
  if (!warm) classifier_lineage_.clear();
  classifier_lineage_.push_back(ccfg.seed);
  classifier_ = train_classifier(std::move(start), embedded, ccfg);

  double accuracy = std::numeric_limits<double>::quiet_NaN();
  if (data_.holdout && data_.holdout->size() > 0)
    accuracy = evaluate_accuracy(*classifier_, {holdout_embedded_, data_.holdout->labels});

  ++step_;
  issue_next_batch();
  elapsed_ += clock_() - started;
  history_.push_back({labels, accuracy, elapsed_});
}

void Session::issue_next_batch() {
  const Index labels = labels_acquired();
  const Index n = std::min({cfg_.batch_size, cfg_.budget - labels, static_cast<Index>(unlabeled_.size())});
  if (n <= 0) return;
  SelectionContext ctx;
  ctx.embeddings = pool_embedded_;
  for (const auto& entry : labeled_) ctx.labeled.push_back(entry.first);
  ctx.unlabeled = unlabeled_;
  ctx.probabilities = classifier_->predict_proba(*pool_embedded_);
  ctx.params = cfg_.strategy_params;
  ctx.cache = cluster_cache_.get();
  for (const auto& pick : select(cfg_.strategy, ctx, n, rng_)) {
    pending_.push_back(pick.index);
    audit_.push_back({step_, cfg_.strategy, pick.index, pick.score});
  }
}

void Session::step(Oracle& oracle) {
  if (pending_.empty()) throw ConflictError("session is done");
  const auto todo = unanswered();
  std::vector<std::string> ids;
  for (const Index i : todo) ids.push_back(item_id(i));
  const auto answers = oracle.label(ids);
  if (answers.size() != ids.size())
    throw ValidationError("oracle returned " + std::to_string(answers.size()) + " labels for " +
                          std::to_string(ids.size()) + " items");
  Session next = *this;
  for (std::size_t k = 0; k < todo.size(); ++k) next.record_label(todo[k], answers[k]);
  next.commit_in_place();
  *this = std::move(next);
}

void Session::run(Oracle& oracle) {
  while (phase() != Phase::Done) step(oracle);
}

std::optional<EmbeddingCheckpoint> Session::embedding_checkpoint() const {
  if (!embedding_) return std::nullopt;
  return EmbeddingCheckpoint{*embedding_, cfg_.loss, embedding_lineage_};
}

std::optional<ClassifierCheckpoint> Session::classifier_checkpoint() const {
  if (!classifier_) return std::nullopt;
  return ClassifierCheckpoint{*classifier_, data_.classes.names(), classifier_lineage_};
}

json Session::to_json() const {
  json labeled = json::array();
  for (const auto& [i, l] : labeled_) labeled.push_back({i, l});
  json answers = json::array();
  for (const auto& [i, l] : answers_) answers.push_back({i, l});
  json history = json::array();
  for (const auto& p : history_) history.push_back({p.labels, number_or_null(p.accuracy), p.wall_time});
  json audit = json::array();
  for (const auto& r : audit_) audit.push_back({r.step, to_string(r.strategy), r.index, number_or_null(r.score)});
  std::ostringstream rng;
  rng << rng_;
  return {{"format", "traplab-session"},
          {"version", kSessionVersion},
          {"config", traplab::to_json(cfg_)},
          {"classes", data_.classes.names()},
          {"pool", {{"size", data_.pool->size()},
                    {"dim", data_.pool->features.rows()},
                    {"fingerprint", pool_fingerprint(*data_.pool)}}},
          {"step", step_},
          {"labeled", std::move(labeled)},
          {"pending", pending_},
          {"answers", std::move(answers)},
          {"history", std::move(history)},
          {"audit", std::move(audit)},
          {"finetune_events", finetune_events_},
          {"elapsed", elapsed_},
          {"rng", rng.str()},
          {"embedding", embedding_ ? traplab::to_json(*embedding_checkpoint()) : json(nullptr)},
          {"classifier", classifier_ ? traplab::to_json(*classifier_checkpoint()) : json(nullptr)}};
}

std::string Session::save() const { return to_json().dump(); }

Session Session::load(std::string_view bytes, SessionData data, Clock clock) {
  const json j = parse_json_document(bytes, "session state");
  if (!j.is_object() || j.value("format", "") != "traplab-session") throw ParseError("not a traplab session");
  if (j.value("version", -1) != kSessionVersion)
    throw ParseError("unsupported session version " + std::to_string(j.value("version", -1)));
  Session s;
  s.attach(std::move(data));
  s.clock_ = std::move(clock);
  try {
    s.cfg_ = loop_config_from_json(j.at("config"));
    if (j.at("classes").get<std::vector<std::string>>() != s.data_.classes.names())
      throw ValidationError("session class table differs from the supplied one");
    const auto& pool = j.at("pool");
    if (pool.at("size").get<Index>() != s.data_.pool->size() ||
        pool.at("dim").get<Index>() != s.data_.pool->features.rows() ||
        pool.at("fingerprint").get<std::uint64_t>() != pool_fingerprint(*s.data_.pool))
      throw ValidationError("session was saved over a different pool");
    const Index n = s.data_.pool->size();
    auto check_index = [n](Index i) {
      if (i < 0 || i >= n) throw ParseError("session refers to pool index " + std::to_string(i));
      return i;
    };
    s.step_ = j.at("step").get<Index>();
    for (const auto& e : j.at("labeled")) s.labeled_.emplace(check_index(e.at(0).get<Index>()), e.at(1).get<int>());
    for (const auto& e : j.at("pending")) s.pending_.push_back(check_index(e.get<Index>()));
    for (const auto& e : j.at("answers")) s.answers_.emplace(check_index(e.at(0).get<Index>()), e.at(1).get<int>());
    for (const auto& e : j.at("history"))
      s.history_.push_back({e.at(0).get<Index>(), number_or_nan(e.at(1)), e.at(2).get<double>()});
    for (const auto& e : j.at("audit"))
      s.audit_.push_back({e.at(0).get<Index>(), parse_strategy(e.at(1).get<std::string>()), e.at(2).get<Index>(),
                          number_or_nan(e.at(3))});
    s.finetune_events_ = j.at("finetune_events").get<std::vector<Index>>();
    s.elapsed_ = j.at("elapsed").get<double>();
    std::istringstream rng(j.at("rng").get<std::string>());
    rng >> s.rng_;
    if (rng.fail()) throw ParseError("session RNG state is unreadable");
    if (!j.at("embedding").is_null()) {
      auto ckpt = embedding_checkpoint_from_json(j.at("embedding"));
      s.embedding_ = std::move(ckpt.net);
      s.embedding_lineage_ = std::move(ckpt.seed_lineage);
    }
    if (!j.at("classifier").is_null()) {
      auto ckpt = classifier_checkpoint_from_json(j.at("classifier"));
      s.classifier_ = std::move(ckpt.classifier);
      s.classifier_lineage_ = std::move(ckpt.seed_lineage);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed session state: ") + e.what());
  }
  for (const auto& [i, l] : s.labeled_)
    if (l < 0 || l >= s.data_.classes.size()) throw ParseError("session label outside the class table");
  for (const auto& [i, l] : s.answers_)
    if (std::find(s.pending_.begin(), s.pending_.end(), i) == s.pending_.end() || l < 0 ||
        l >= s.data_.classes.size())
      throw ParseError("session answer does not match the pending batch");
  for (const Index i : s.pending_)
    if (s.labeled_.contains(i)) throw ParseError("pending item " + std::to_string(i) + " is already labeled");
  for (Index i = 0; i < s.data_.pool->size(); ++i)
    if (!s.labeled_.contains(i)) s.unlabeled_.push_back(i);
  if (s.embedding_) {
    if (s.embedding_->input_dim() != s.data_.pool->features.rows())
      throw ParseError("session embedding does not match the pool dimension");
    s.refresh_embeddings();
  }
  return s;
}

std::vector<CurvePoint> run_simulation(SessionData data, const std::map<std::string, std::string>& truth,
                                       const LoopConfig& cfg, std::optional<EmbeddingCheckpoint> pretrained,
                                       Clock clock) {
  SimulatedOracle oracle(truth, data.classes);
  Session s = Session::create(std::move(data), cfg, std::move(pretrained), std::move(clock));
  s.run(oracle);
  return s.history();
}

}  // namespace traplab
