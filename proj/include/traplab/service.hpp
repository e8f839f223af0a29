#pragma once

#include "traplab/session_store.hpp"

#include <json.hpp>

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

namespace httplib {
class Server;
}

namespace traplab {

struct ServiceConfig {
  std::filesystem::path session_root;
  std::filesystem::path crop_root;
  Clock clock = steady_clock_seconds();
};

struct QueueItem {
  std::string crop_id;
  std::string image;  // URL path of the crop image
  Index batch_id = 0;
  double issued_at = 0;  // seconds since the Unix epoch
};

struct LabelSubmission {
  std::string crop_id;
  std::variant<int, std::string> label;  // class index or class name
  std::string submitter;                 // advisory only
  std::optional<Index> batch_id;         // defaults to the pending batch
};

enum class ItemStatus { Accepted, Duplicate, Conflict, NotFound, Invalid };

std::string_view to_string(ItemStatus s);

struct ItemResult {
  std::string crop_id;
  ItemStatus status = ItemStatus::Accepted;
  std::string error;
};

struct SubmitResult {
  Index accepted = 0;
  std::vector<ItemResult> items;

  bool has_conflict() const;
};

struct Progress {
  Index labels_acquired = 0;
  Index step = 0;
  Index budget = 0;
  Phase state = Phase::AwaitingLabels;
  std::vector<CurvePoint> curve;
  std::string last_error;
};

/// Human-oracle front end over sessions stored under one root directory.
/// Reads may run concurrently; writes to one session are serialized. When a
/// submission answers the last pending item, the commit (retraining and the
/// next selection) runs on a worker thread and the session reports
/// "training" with an empty queue until it finishes.
class LabelService {
 public:
  explicit LabelService(ServiceConfig cfg);
  ~LabelService();
  LabelService(const LabelService&) = delete;
  LabelService& operator=(const LabelService&) = delete;

  /// Opens every session directory under the root (and the root itself if
  /// it holds a session). Returns the ids found.
  std::vector<std::string> open_existing();

  std::string create_session(const std::filesystem::path& pool_dir, const LoopConfig& cfg,
                             std::optional<EmbeddingCheckpoint> pretrained = {},
                             std::optional<std::string> id = std::nullopt);

  std::vector<std::string> session_ids() const;
  std::vector<QueueItem> queue(const std::string& id) const;
  SubmitResult submit(const std::string& id, const std::vector<LabelSubmission>& items);
  Progress progress(const std::string& id) const;
  std::vector<std::string> classes(const std::string& id) const;
  std::string curve_csv(const std::string& id) const;
  std::vector<std::uint8_t> crop_png(const std::string& crop_id) const;

  /// Blocks until the session is not training.
  void wait_idle(const std::string& id) const;

 private:
  struct Entry {
    explicit Entry(SessionStore s) : store(std::move(s)) {}
    mutable std::mutex mutex;
    mutable std::condition_variable idle;
    SessionStore store;
    bool training = false;
    double issued_at = 0;
    std::string last_error;
    std::thread worker;
  };

  std::shared_ptr<Entry> entry(const std::string& id) const;
  void start_commit(const std::shared_ptr<Entry>& e);

  ServiceConfig cfg_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
};

nlohmann::json to_json(const QueueItem& item);
nlohmann::json to_json(const SubmitResult& result);
nlohmann::json to_json(const Progress& progress);
std::vector<LabelSubmission> parse_submissions(const nlohmann::json& body);

/// Registers the HTTP routes for `service` on `server`:
///   POST /sessions                 {"pool": dir, "config": {...}, "id"?, "embedding"?}
///   GET  /sessions/{id}/queue
///   POST /sessions/{id}/labels     {"labels": [{"crop_id", "label", "batch_id"?, "submitter"?}]}
///   GET  /sessions/{id}/progress
///   GET  /sessions/{id}/classes
///   GET  /sessions/{id}/curve.csv
///   GET  /crops/{crop_id}.png
void mount_routes(httplib::Server& server, LabelService& service);

}  // namespace traplab
