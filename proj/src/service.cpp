#include "traplab/service.hpp"

#include "traplab/io.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <chrono>

namespace traplab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double unix_now() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

bool valid_name(std::string_view s) {
  if (s.empty() || s == "." || s == "..") return false;
  for (const char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  return true;
}

}  // namespace

std::string_view to_string(ItemStatus s) {
  switch (s) {
    case ItemStatus::Accepted: return "accepted";
    case ItemStatus::Duplicate: return "duplicate";
    case ItemStatus::Conflict: return "conflict";
    case ItemStatus::NotFound: return "not_found";
    case ItemStatus::Invalid: return "invalid";
  }
  return "invalid";
}

bool SubmitResult::has_conflict() const {
  return std::any_of(items.begin(), items.end(), [](const ItemResult& r) { return r.status == ItemStatus::Conflict; });
}

LabelService::LabelService(ServiceConfig cfg) : cfg_(std::move(cfg)) {}

LabelService::~LabelService() {
  std::lock_guard lock(mutex_);
  for (auto& [id, e] : sessions_)
    if (e->worker.joinable()) e->worker.join();
}

std::vector<std::string> LabelService::open_existing() {
  std::vector<std::pair<std::string, fs::path>> found;
  if (fs::exists(cfg_.session_root / "state.json")) {
    found.emplace_back(fs::absolute(cfg_.session_root).filename().string(), cfg_.session_root);
  } else if (fs::is_directory(cfg_.session_root)) {
    for (const auto& d : fs::directory_iterator(cfg_.session_root))
      if (d.is_directory() && fs::exists(d.path() / "state.json"))
        found.emplace_back(d.path().filename().string(), d.path());
  }
  std::vector<std::string> ids;
  std::lock_guard lock(mutex_);
  for (auto& [id, dir] : found) {
    auto e = std::make_shared<Entry>(SessionStore::open(dir, cfg_.clock));
    e->issued_at = unix_now();
    sessions_[id] = std::move(e);
    ids.push_back(id);
  }
  return ids;
}

std::string LabelService::create_session(const fs::path& pool_dir, const LoopConfig& cfg,
                                         std::optional<EmbeddingCheckpoint> pretrained,
                                         std::optional<std::string> id) {
  std::unique_lock lock(mutex_);
  std::string name;
  if (id) {
    if (!valid_name(*id)) throw ValidationError("session id may only use letters, digits, '-', '_' and '.'");
    if (sessions_.contains(*id) || fs::exists(cfg_.session_root / *id)) throw ConflictError("session '" + *id + "' exists");
    name = *id;
  } else {
    for (int k = 1;; ++k) {
      name = "s" + std::to_string(k);
      if (!sessions_.contains(name) && !fs::exists(cfg_.session_root / name)) break;
    }
  }
  auto e = std::make_shared<Entry>(
      SessionStore::create(cfg_.session_root / name, pool_dir, cfg, std::move(pretrained), cfg_.clock));
  e->issued_at = unix_now();
  sessions_[name] = std::move(e);
  return name;
}

std::vector<std::string> LabelService::session_ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, e] : sessions_) out.push_back(id);
  return out;
}

std::shared_ptr<LabelService::Entry> LabelService::entry(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
  return it->second;
}

std::vector<QueueItem> LabelService::queue(const std::string& id) const {
  const auto e = entry(id);
  std::lock_guard lock(e->mutex);
  std::vector<QueueItem> out;
  if (e->training) return out;
  const Session& s = e->store.session();
  for (const Index i : s.unanswered())
    out.push_back({s.item_id(i), "/crops/" + s.item_id(i) + ".png", s.batch_id(), e->issued_at});
  return out;
}

SubmitResult LabelService::submit(const std::string& id, const std::vector<LabelSubmission>& items) {
  const auto e = entry(id);
  std::unique_lock lock(e->mutex);
  const Session& s = e->store.session();
  SubmitResult result;
  for (const auto& sub : items) {
    ItemResult r{sub.crop_id, ItemStatus::Accepted, {}};
    try {
      const auto item = s.find_item(sub.crop_id);
      if (!item) throw NotFoundError("unknown crop '" + sub.crop_id + "'");
      const int label = std::holds_alternative<int>(sub.label)
                            ? std::get<int>(sub.label)
                            : s.data().classes.index_of(std::get<std::string>(sub.label));
      if (label < 0 || label >= s.data().classes.size())
        throw ValidationError("class index " + std::to_string(label) + " outside the class table");
      if (sub.batch_id && *sub.batch_id != s.batch_id()) {
        // A retry for an earlier batch: idempotent against what was committed.
        const auto done = s.labeled().find(*item);
        if (done == s.labeled().end() || *sub.batch_id > s.batch_id())
          throw NotFoundError("crop '" + sub.crop_id + "' is not in batch " + std::to_string(*sub.batch_id));
        if (done->second != label)
          throw ConflictError("crop '" + sub.crop_id + "' was labeled '" + s.data().classes.name(done->second) + "'");
        r.status = ItemStatus::Duplicate;
      } else if (e->store.submit(*item, label, "human") == RecordResult::Duplicate) {
        r.status = ItemStatus::Duplicate;
      } else {
        ++result.accepted;
      }
    } catch (const ConflictError& ex) {
      r = {sub.crop_id, ItemStatus::Conflict, ex.what()};
    } catch (const NotFoundError& ex) {
      r = {sub.crop_id, ItemStatus::NotFound, ex.what()};
    } catch (const std::invalid_argument& ex) {
      r = {sub.crop_id, ItemStatus::Invalid, ex.what()};
    }
    result.items.push_back(std::move(r));
  }
  if (!e->training && e->store.session().ready_to_commit()) {
    lock.unlock();
    start_commit(e);
  }
  return result;
}

void LabelService::start_commit(const std::shared_ptr<Entry>& e) {
  std::unique_lock lock(e->mutex);
  if (e->training || !e->store.session().ready_to_commit()) return;
  if (e->worker.joinable()) e->worker.join();
  e->training = true;
  Session next = e->store.session();
  e->worker = std::thread([e, next = std::move(next)]() mutable {
    std::string error;
    try {
      next.commit();
    } catch (const std::exception& ex) {
      error = ex.what();
    }
    std::lock_guard lock(e->mutex);
    try {
      if (error.empty()) e->store.install(std::move(next));
    } catch (const std::exception& ex) {
      error = ex.what();
    }
    e->last_error = error;
    e->issued_at = unix_now();
    e->training = false;
    e->idle.notify_all();
  });
}

Progress LabelService::progress(const std::string& id) const {
  const auto e = entry(id);
  std::lock_guard lock(e->mutex);
  const Session& s = e->store.session();
  return {s.labels_acquired(), s.step(), s.config().budget, e->training ? Phase::Training : s.phase(), s.history(),
          e->last_error};
}

std::vector<std::string> LabelService::classes(const std::string& id) const {
  const auto e = entry(id);
  std::lock_guard lock(e->mutex);
  return e->store.session().data().classes.names();
}

std::string LabelService::curve_csv(const std::string& id) const {
  const auto e = entry(id);
  std::lock_guard lock(e->mutex);
  return format_curve_csv(e->store.session().history());
}

std::vector<std::uint8_t> LabelService::crop_png(const std::string& crop_id) const {
  if (!valid_name(crop_id)) throw NotFoundError("invalid crop id");
  const fs::path path = cfg_.crop_root / (crop_id + ".png");
  if (!fs::is_regular_file(path)) throw NotFoundError("no crop image '" + crop_id + "'");
  return read_binary_file(path);
}

void LabelService::wait_idle(const std::string& id) const {
  const auto e = entry(id);
  std::unique_lock lock(e->mutex);
  e->idle.wait(lock, [&] { return !e->training; });
}

json to_json(const QueueItem& item) {
  return {{"crop_id", item.crop_id}, {"image", item.image}, {"batch_id", item.batch_id}, {"issued_at", item.issued_at}};
}

json to_json(const SubmitResult& result) {
  json items = json::array();
  for (const auto& r : result.items) {
    json j{{"crop_id", r.crop_id}, {"status", to_string(r.status)}};
    if (!r.error.empty()) j["error"] = r.error;
    items.push_back(std::move(j));
  }
  return {{"accepted", result.accepted}, {"results", std::move(items)}};
}

json to_json(const Progress& p) {
  json curve = json::array();
  for (const auto& c : p.curve)
    curve.push_back({{"labels", c.labels},
                     {"accuracy", std::isfinite(c.accuracy) ? json(c.accuracy) : json(nullptr)},
                     {"wall_time_s", c.wall_time}});
  json out{{"labels_acquired", p.labels_acquired},
           {"step", p.step},
           {"budget", p.budget},
           {"state", to_string(p.state)},
           {"curve", std::move(curve)}};
  if (!p.last_error.empty()) out["last_error"] = p.last_error;
  return out;
}

std::vector<LabelSubmission> parse_submissions(const json& body) {
  const json* list = &body;
  if (body.is_object()) {
    if (!body.contains("labels")) throw ValidationError("body needs a \"labels\" array");
    list = &body.at("labels");
  }
  if (!list->is_array()) throw ValidationError("labels must be an array");
  std::vector<LabelSubmission> out;
  for (const auto& j : *list) {
    if (!j.is_object() || !j.contains("crop_id") || !j.contains("label"))
      throw ValidationError("each label needs crop_id and label");
    LabelSubmission s;
    s.crop_id = j.at("crop_id").get<std::string>();
    const auto& label = j.at("label");
    if (label.is_number_integer()) s.label = label.get<int>();
    else if (label.is_string()) s.label = label.get<std::string>();
    else throw ValidationError("label must be a class index or name");
    if (j.contains("submitter")) s.submitter = j.at("submitter").get<std::string>();
    if (j.contains("batch_id")) s.batch_id = j.at("batch_id").get<Index>();
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const NotFoundError& e) {
      send_json(res, {{"error", e.what()}}, 404);
    } catch (const ConflictError& e) {
      send_json(res, {{"error", e.what()}}, 409);
    } catch (const json::exception& e) {
      send_json(res, {{"error", e.what()}}, 400);
    } catch (const ParseError& e) {
      send_json(res, {{"error", e.what()}}, 400);
    } catch (const std::invalid_argument& e) {
      send_json(res, {{"error", e.what()}}, 400);
    } catch (const std::exception& e) {
      send_json(res, {{"error", e.what()}}, 500);
    }
  };
}

}  // namespace

void mount_routes(httplib::Server& server, LabelService& service) {
  server.Post("/sessions", guarded([&service](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_json_document(req.body, "request body");
    if (!body.is_object() || !body.contains("pool")) throw ValidationError("body needs \"pool\"");
    const LoopConfig cfg = body.contains("config") ? loop_config_from_json(body.at("config")) : LoopConfig{};
    std::optional<EmbeddingCheckpoint> pretrained;
    if (body.contains("embedding"))
      pretrained = load_embedding_checkpoint(read_text_file(body.at("embedding").get<std::string>()));
    std::optional<std::string> id;
    if (body.contains("id")) id = body.at("id").get<std::string>();
    const std::string created =
        service.create_session(body.at("pool").get<std::string>(), cfg, std::move(pretrained), id);
    send_json(res, {{"id", created}}, 201);
  }));
  server.Get(R"(/sessions/([^/]+)/queue)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
    json items = json::array();
    for (const auto& q : service.queue(req.matches[1])) items.push_back(to_json(q));
    send_json(res, {{"items", std::move(items)}});
  }));
  server.Post(R"(/sessions/([^/]+)/labels)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
    const auto subs = parse_submissions(parse_json_document(req.body, "request body"));
    const auto result = service.submit(req.matches[1], subs);
    send_json(res, to_json(result), result.has_conflict() ? 409 : 200);
  }));
  server.Get(R"(/sessions/([^/]+)/progress)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
    send_json(res, to_json(service.progress(req.matches[1])));
  }));
  server.Get(R"(/sessions/([^/]+)/classes)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
    json classes = json::array();
    const auto names = service.classes(req.matches[1]);
    for (std::size_t k = 0; k < names.size(); ++k) classes.push_back({{"index", k}, {"name", names[k]}});
    send_json(res, {{"classes", std::move(classes)}});
  }));
  server.Get(R"(/sessions/([^/]+)/curve\.csv)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
    res.set_content(service.curve_csv(req.matches[1]), "text/csv");
  }));
  server.Get(R"(/crops/([^/]+)\.png)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
    const auto bytes = service.crop_png(req.matches[1]);
    res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
  }));
}

}  // namespace traplab
