// traplab: batch entry points for ingest, embedding, simulation, serving and
// evaluation. Every command exits 0 on success and prints one diagnostic
// line and exits 1 on failure. Outputs are staged and renamed into place.

#include "traplab/checkpoint.hpp"
#include "traplab/dataset.hpp"
#include "traplab/detection.hpp"
#include "traplab/io.hpp"
#include "traplab/service.hpp"
#include "traplab/session.hpp"
#include "traplab/session_store.hpp"
#include "traplab/synthetic.hpp"

#include <CLI11.hpp>
#include <httplib.h>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include <unistd.h>

namespace fs = std::filesystem;
using namespace traplab;

namespace {

struct IngestArgs {
  fs::path detections;
  fs::path images;
  fs::path out;
  double threshold = 0.90;
  int crop_side = 256;
  int jobs = 1;
};

struct EmbedArgs {
  fs::path features;
  fs::path labels;
  std::string loss = "triplet";
  fs::path out;
  TripletConfig triplet;
  EmbeddingArchitecture arch;
  std::vector<Index> hidden{256, 256};
};

struct SimulateArgs {
  fs::path pool;
  fs::path truth;
  std::string strategy = "k-center";
  std::string loss = "triplet";
  std::string source = "crops";
  fs::path embedding;
  fs::path out;
  fs::path selections;
  bool fixed_clock = false;
  LoopConfig loop;
  std::vector<Index> hidden{256, 256};
};

struct ServeArgs {
  fs::path session;
  std::string listen = "127.0.0.1:8080";
  fs::path crops;
};

struct EvalArgs {
  fs::path predictions;
  fs::path truth;
  fs::path out;
};

struct ExportArgs {
  fs::path ckpt;
  fs::path features;
  fs::path out;
};

struct SynthArgs {
  fs::path out;
  MixtureConfig mixture;
  std::vector<double> weights;
};

/// Creates a fresh sibling directory to fill, then renames it to `target`.
class StagedDir {
 public:
  explicit StagedDir(fs::path target) : target_(std::move(target)) {
    if (fs::exists(target_) && !fs::is_empty(target_))
      throw ValidationError("output directory " + target_.string() + " exists and is not empty");
    staging_ = target_;
    staging_ += ".partial-" + std::to_string(::getpid());
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }
  ~StagedDir() {
    std::error_code ec;
    if (!committed_) fs::remove_all(staging_, ec);
  }
  const fs::path& path() const { return staging_; }
  void commit() {
    if (fs::exists(target_)) fs::remove(target_);
    fs::rename(staging_, target_);
    committed_ = true;
  }

 private:
  fs::path target_;
  fs::path staging_;
  bool committed_ = false;
};

void run_ingest(const IngestArgs& a) {
  IngestConfig cfg{a.threshold, a.crop_side};
  cfg.validate();
  if (a.jobs < 1) throw ValidationError("--jobs must be at least 1");
  const auto images = parse_detection_file(read_text_file(a.detections));
  StagedDir out(a.out);

  struct Result {
    std::vector<std::string> rows;
    std::string error;
  };
  std::vector<Result> results(images.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < images.size(); k = next++) {
      const auto& [entry, dets] = images[k];
      try {
        const auto kept = filter_detections(dets, cfg);
        if (kept.empty()) continue;
        const RgbImage image = read_image(a.images / entry.source_path);
        for (std::size_t d = 0; d < kept.size(); ++d) {
          Crop crop = crop_and_resize(image, kept[d].bbox, cfg);
          crop.crop_id = entry.image_id + "_" + std::to_string(d);
          write_png(crop.pixels, out.path() / (crop.crop_id + ".png"));
          char conf[32];
          std::snprintf(conf, sizeof conf, "%.6g", kept[d].confidence);
          results[k].rows.push_back(crop.crop_id + "," + entry.image_id + "," + std::to_string(crop.source.x) +
                                    "," + std::to_string(crop.source.y) + "," + std::to_string(crop.source.width) +
                                    "," + std::to_string(crop.source.height) + "," + conf);
        }
      } catch (const std::exception& e) {
        results[k].error = entry.image_id + ": " + e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int j = 1; j < std::min<int>(a.jobs, static_cast<int>(images.size())); ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::string crops = "crop_id,image_id,x,y,w,h,conf\n";
  std::string empty = "image_id\n";
  std::string counts = "image_id,count,bin\n";
  for (std::size_t k = 0; k < images.size(); ++k) {
    if (!results[k].error.empty()) throw std::runtime_error(results[k].error);
    const auto& [entry, dets] = images[k];
    for (const auto& row : results[k].rows) crops += row + "\n";
    if (classify_empty(dets, cfg) == Occupancy::Empty) {
      empty += entry.image_id + "\n";
    } else {
      const int n = count_animals(dets, cfg);
      counts += entry.image_id + "," + std::to_string(n) + "," + CountBin::of(n).name() + "\n";
    }
  }
  write_file_atomic(out.path() / "crops.csv", crops);
  write_file_atomic(out.path() / "empty.csv", empty);
  write_file_atomic(out.path() / "counts.csv", counts);
  out.commit();
}

LabeledSamples load_labeled(const fs::path& features, const fs::path& labels, ClassTable* classes_out = nullptr) {
  const FeatureTable table = read_feature_table(features);
  const auto rows = read_label_csv(labels);
  const std::map<std::string, std::string> truth(rows.begin(), rows.end());
  const ClassTable classes = ClassTable::from_labels(rows);
  if (classes_out) *classes_out = classes;
  return attach_labels(table, truth, classes);
}

void run_embed(EmbedArgs a) {
  a.triplet.validate();
  a.arch.hidden = a.hidden;
  const EmbeddingLoss loss = parse_embedding_loss(a.loss);
  const LabeledSamples data = load_labeled(a.features, a.labels);
  EmbeddingNet net = make_embedding_net(data.features.rows(), a.arch, a.triplet.seed);
  net = loss == EmbeddingLoss::Triplet ? train_embedding_triplet(std::move(net), data, a.triplet)
                                       : train_embedding_xent(std::move(net), data, a.triplet);
  write_file_atomic(a.out, save_embedding_checkpoint({std::move(net), loss, {a.triplet.seed}}));
}

void run_simulate(SimulateArgs a) {
  LoopConfig cfg = a.loop;
  cfg.strategy = parse_strategy(a.strategy);
  cfg.loss = parse_embedding_loss(a.loss);
  cfg.source = parse_feature_source(a.source);
  cfg.architecture.hidden = a.hidden;
  cfg.validate();
  PoolData pool = load_pool_dir(a.pool, cfg.source);
  if (!a.truth.empty()) {
    const auto rows = read_label_csv(a.truth);
    pool.truth = std::map<std::string, std::string>(rows.begin(), rows.end());
  }
  if (!pool.truth) throw ValidationError("no ground truth: pass --truth or add truth.csv to the pool");
  std::optional<EmbeddingCheckpoint> pretrained;
  if (!a.embedding.empty()) pretrained = load_embedding_checkpoint(read_text_file(a.embedding));
  const auto truth = *pool.truth;
  SessionData data = make_session_data(pool);
  SimulatedOracle oracle(truth, data.classes);
  Clock clock = a.fixed_clock ? Clock([] { return 0.0; }) : steady_clock_seconds();
  Session session = Session::create(std::move(data), cfg, std::move(pretrained), clock);
  session.run(oracle);
  write_file_atomic(a.out, format_curve_csv(session.history()));
  if (!a.selections.empty()) write_file_atomic(a.selections, format_selections_csv(session.audit()));
}

httplib::Server* g_server = nullptr;

void run_serve(const ServeArgs& a) {
  const auto colon = a.listen.rfind(':');
  if (colon == std::string::npos) throw ValidationError("--listen must be HOST:PORT");
  const std::string host = a.listen.substr(0, colon);
  const int port = std::stoi(a.listen.substr(colon + 1));
  fs::create_directories(a.session);
  LabelService service({a.session, a.crops, steady_clock_seconds()});
  const auto ids = service.open_existing();
  httplib::Server server;
  mount_routes(server, service);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::cerr << "traplab: serving " << ids.size() << " session(s) on " << a.listen << "\n";
  if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + a.listen);
  g_server = nullptr;
}

struct ImageTruth {
  std::string label;
  long count = 0;
  bool empty = true;
};

std::map<std::string, ImageTruth> read_truth_table(const fs::path& path) {
  std::map<std::string, ImageTruth> out;
  for (auto& [id, gt] : parse_ground_truth_csv(read_text_file(path)))
    if (!out.emplace(id, ImageTruth{gt.label, gt.count, gt.empty}).second)
      throw ValidationError(path.string() + ": duplicate image_id '" + id + "'");
  return out;
}

void run_eval(const EvalArgs& a) {
  const auto pred = read_truth_table(a.predictions);
  const auto truth = read_truth_table(a.truth);
  if (pred.size() != truth.size())
    throw ValidationError("predictions have " + std::to_string(pred.size()) + " images, truth has " +
                          std::to_string(truth.size()));

  ConfusionCounts confusion;
  std::size_t species_total = 0, species_correct = 0;
  std::vector<long> count_pred, count_true;
  for (const auto& [id, t] : truth) {
    const auto it = pred.find(id);
    if (it == pred.end()) throw NotFoundError("no prediction for '" + id + "'");
    const ImageTruth& p = it->second;
    if (!t.empty && !p.empty) ++confusion.true_positive;
    else if (!t.empty) ++confusion.false_negative;
    else if (!p.empty) ++confusion.false_positive;
    else ++confusion.true_negative;
    if (!t.empty) {
      ++species_total;
      if (!p.empty && p.label == t.label) ++species_correct;
      if (!p.empty && p.count >= 1 && t.count >= 1) {
        count_pred.push_back(p.count);
        count_true.push_back(t.count);
      }
    }
  }
  const BinaryMetrics binary = binary_metrics(confusion);
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json report{{"images", truth.size()},
                        {"binary",
                         {{"accuracy", binary.accuracy},
                          {"precision", opt(binary.precision)},
                          {"recall", opt(binary.recall)},
                          {"true_positive", confusion.true_positive},
                          {"false_positive", confusion.false_positive},
                          {"true_negative", confusion.true_negative},
                          {"false_negative", confusion.false_negative}}}};
  report["species"] = {{"images", species_total},
                       {"top1", species_total ? nlohmann::json(double(species_correct) / species_total)
                                              : nlohmann::json(nullptr)}};
  if (!count_true.empty()) {
    const CountMetrics counts = count_metrics(count_pred, count_true);
    report["count"] = {{"images", count_true.size()},
                       {"top1", counts.top1_accuracy},
                       {"within_one_bin", counts.within_one_bin_accuracy}};
  } else {
    report["count"] = {{"images", 0}, {"top1", nullptr}, {"within_one_bin", nullptr}};
  }
  const std::string text = report.dump(2) + "\n";
  if (a.out.empty()) std::cout << text;
  else write_file_atomic(a.out, text);
}

void run_export(const ExportArgs& a) {
  const EmbeddingCheckpoint ckpt = load_embedding_checkpoint(read_text_file(a.ckpt));
  const FeatureTable in = read_feature_table(a.features);
  write_feature_table(a.out, {in.ids, embed(ckpt.net, in.features)});
}

void run_synth(SynthArgs a) {
  a.mixture.class_weights = a.weights;
  StagedDir out(a.out);
  write_pool_dir(out.path(), make_gaussian_mixture(a.mixture));
  out.commit();
}

void add_loop_options(CLI::App* cmd, LoopConfig& loop) {
  cmd->add_option("--initial", loop.initial_random, "Initial random labels")->capture_default_str();
  cmd->add_option("--batch", loop.batch_size, "Labels per selection step")->capture_default_str();
  cmd->add_option("--finetune-interval", loop.finetune_interval, "Fine-tune every this many labels")
      ->capture_default_str();
  cmd->add_option("--finetune-start", loop.finetune_start, "First label count eligible for fine-tuning")
      ->capture_default_str();
  cmd->add_flag("!--no-finetune", loop.finetune, "Never fine-tune the embedding");
  cmd->add_option("--margin-tau", loop.strategy_params.margin_tau, "Margin region width for margin-cluster-mean")
      ->capture_default_str();
  cmd->add_option("--clusters", loop.strategy_params.clusters, "Informative-diverse clusters (0 = auto)")
      ->capture_default_str();
  cmd->add_option("--embed-epochs", loop.embedding.epochs)->capture_default_str();
  cmd->add_option("--embed-lr", loop.embedding.learning_rate)->capture_default_str();
  cmd->add_option("--embed-batch", loop.embedding.batch_size)->capture_default_str();
  cmd->add_option("--triplet-margin", loop.embedding.margin)->capture_default_str();
  cmd->add_option("--dim", loop.architecture.output_dim, "Embedding dimension")->capture_default_str();
  cmd->add_option("--clf-epochs", loop.classifier.epochs)->capture_default_str();
  cmd->add_option("--clf-lr", loop.classifier.learning_rate)->capture_default_str();
  cmd->add_option("--clf-batch", loop.classifier.batch_size)->capture_default_str();
  cmd->add_option("--clf-hidden", loop.classifier_hidden)->capture_default_str();
  cmd->add_flag("--warm-start", loop.classifier.warm_start, "Retrain the classifier from its previous weights");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"traplab: active learning for camera-trap crops"};
  app.set_config("--config", "", "TOML config file; flags override it");
  app.require_subcommand(1);
  app.fallthrough();  // --config is accepted after the subcommand name too

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Threshold detections, write crops and the empty-image report");
  c_ingest->add_option("--detections", ingest.detections, "Detector output JSON")->required()->check(CLI::ExistingFile);
  c_ingest->add_option("--images", ingest.images, "Image root the detection file paths are relative to")
      ->required()
      ->check(CLI::ExistingDirectory);
  c_ingest->add_option("--out", ingest.out, "Output directory")->required();
  c_ingest->add_option("--threshold", ingest.threshold, "Detection confidence threshold")->capture_default_str();
  c_ingest->add_option("--crop-side", ingest.crop_side, "Crop side in pixels")->capture_default_str();
  c_ingest->add_option("--jobs", ingest.jobs, "Worker threads")->capture_default_str();

  EmbedArgs emb;
  auto* c_embed = app.add_subcommand("embed", "Train an embedding checkpoint");
  c_embed->add_option("--features", emb.features, "Feature CSV (with .index sidecar)")->required()->check(CLI::ExistingFile);
  c_embed->add_option("--labels", emb.labels, "Label CSV: id,label")->required()->check(CLI::ExistingFile);
  c_embed->add_option("--loss", emb.loss, "triplet or xent")->capture_default_str();
  c_embed->add_option("--out", emb.out, "Checkpoint path")->required();
  c_embed->add_option("--epochs", emb.triplet.epochs)->capture_default_str();
  c_embed->add_option("--lr", emb.triplet.learning_rate)->capture_default_str();
  c_embed->add_option("--batch", emb.triplet.batch_size)->capture_default_str();
  c_embed->add_option("--margin", emb.triplet.margin)->capture_default_str();
  c_embed->add_option("--seed", emb.triplet.seed)->capture_default_str();
  c_embed->add_option("--dim", emb.arch.output_dim)->capture_default_str();
  c_embed->add_option("--hidden", emb.hidden, "Hidden layer widths")->capture_default_str();

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Run the active-learning loop against ground truth");
  c_sim->add_option("--pool", sim.pool, "Pool directory")->required()->check(CLI::ExistingDirectory);
  c_sim->add_option("--truth", sim.truth, "Ground-truth CSV (default: pool/truth.csv)")->check(CLI::ExistingFile);
  c_sim->add_option("--strategy", sim.strategy, strategy_names())->capture_default_str();
  c_sim->add_option("--budget", sim.loop.budget, "Total labels")->capture_default_str();
  c_sim->add_option("--seed", sim.loop.seed)->capture_default_str();
  c_sim->add_option("--out", sim.out, "Learning-curve CSV")->required();
  c_sim->add_option("--selections", sim.selections, "Selection audit CSV");
  c_sim->add_option("--loss", sim.loss, "Embedding loss: triplet or xent")->capture_default_str();
  c_sim->add_option("--source", sim.source, "Feature source: crops or full")->capture_default_str();
  c_sim->add_option("--embedding", sim.embedding, "Pretrained embedding checkpoint")->check(CLI::ExistingFile);
  c_sim->add_option("--hidden", sim.hidden, "Embedding hidden widths")->capture_default_str();
  c_sim->add_flag("--fixed-clock", sim.fixed_clock, "Report zero wall time (byte-identical curves)");
  add_loop_options(c_sim, sim.loop);

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "Serve sessions to human labelers over HTTP");
  c_serve->add_option("--session", serve.session, "Session root directory")->required();
  c_serve->add_option("--listen", serve.listen, "HOST:PORT")->capture_default_str();
  c_serve->add_option("--crops", serve.crops, "Crop image directory");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Score image-level predictions against ground truth");
  c_eval->add_option("--predictions", ev.predictions, "CSV: image_id,label,count,empty")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--truth", ev.truth, "CSV: image_id,label,count,empty")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--out", ev.out, "Report path (default: stdout)");

  ExportArgs ex;
  auto* c_export = app.add_subcommand("export-embedding", "Embed a feature table with a checkpoint");
  c_export->add_option("--ckpt", ex.ckpt)->required()->check(CLI::ExistingFile);
  c_export->add_option("--features", ex.features)->required()->check(CLI::ExistingFile);
  c_export->add_option("--out", ex.out, "Output CSV (with .index sidecar)")->required();

  SynthArgs syn;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic Gaussian-mixture pool directory");
  c_synth->add_option("--out", syn.out)->required();
  c_synth->add_option("--classes", syn.mixture.classes)->capture_default_str();
  c_synth->add_option("--dim", syn.mixture.dim)->capture_default_str();
  c_synth->add_option("--pool", syn.mixture.pool_size)->capture_default_str();
  c_synth->add_option("--holdout", syn.mixture.holdout_size)->capture_default_str();
  c_synth->add_option("--separation", syn.mixture.separation, "Mean separation in sigmas")->capture_default_str();
  c_synth->add_option("--weights", syn.weights, "Relative class frequencies");
  c_synth->add_option("--seed", syn.mixture.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*c_ingest) run_ingest(ingest);
    else if (*c_embed) run_embed(emb);
    else if (*c_sim) run_simulate(sim);
    else if (*c_serve) run_serve(serve);
    else if (*c_eval) run_eval(ev);
    else if (*c_export) run_export(ex);
    else if (*c_synth) run_synth(syn);
  } catch (const std::exception& e) {
    std::cerr << "traplab: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
