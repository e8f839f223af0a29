#include "traplab/session_store.hpp"

#include "traplab/io.hpp"

#include <chrono>
#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace traplab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kConfigFile = "config.json";
constexpr const char* kJournalFile = "journal.ndjson";
constexpr const char* kStateFile = "state.json";

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

}  // namespace

std::string format_journal_line(const JournalEntry& e) {
  return json{{"step", e.step},
              {"crop_id", e.crop_id},
              {"label", e.label},
              {"timestamp", e.timestamp},
              {"oracle_kind", e.oracle_kind}}
             .dump() +
         "\n";
}

JournalEntry parse_journal_line(std::string_view line) {
  const json j = parse_json_document(line, "journal record");
  try {
    return {j.at("step").get<Index>(), j.at("crop_id").get<std::string>(), j.at("label").get<std::string>(),
            j.at("timestamp").get<double>(), j.at("oracle_kind").get<std::string>()};
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed journal record: ") + e.what());
  }
}

std::vector<JournalEntry> read_journal(const fs::path& path) {
  std::vector<JournalEntry> out;
  if (!fs::exists(path)) return out;
  const std::string text = read_text_file(path);
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t end = text.find('\n', start);
    if (end == std::string::npos) break;  // torn final write
    if (end > start) out.push_back(parse_journal_line(std::string_view(text).substr(start, end - start)));
    start = end + 1;
  }
  return out;
}

SessionStore SessionStore::create(const fs::path& dir, const fs::path& pool_dir, const LoopConfig& cfg,
                                  std::optional<EmbeddingCheckpoint> pretrained, Clock clock) {
  if (fs::exists(dir / kStateFile)) throw ConflictError("session already exists in " + dir.string());
  const fs::path pool_abs = fs::absolute(pool_dir);
  Session session =
      Session::create(make_session_data(load_pool_dir(pool_abs, cfg.source)), cfg, std::move(pretrained),
                      std::move(clock));
  fs::create_directories(dir);
  write_file_atomic(dir / kConfigFile,
                    json{{"format", "traplab-session-dir"}, {"version", 1}, {"pool", pool_abs.string()},
                         {"config", to_json(cfg)}}
                            .dump(2) +
                        "\n");
  SessionStore store(dir, pool_abs, std::move(session));
  store.persist();
  return store;
}

SessionStore SessionStore::open(const fs::path& dir, Clock clock) {
  if (!fs::exists(dir / kStateFile)) throw NotFoundError("no session in " + dir.string());
  const json config = parse_json_document(read_text_file(dir / kConfigFile), "session config");
  fs::path pool_dir;
  LoopConfig cfg;
  try {
    pool_dir = config.at("pool").get<std::string>();
    cfg = loop_config_from_json(config.at("config"));
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed session config: ") + e.what());
  }
  Session session = Session::load(read_text_file(dir / kStateFile), make_session_data(load_pool_dir(pool_dir, cfg.source)),
                                  std::move(clock));

  // Replay answers journaled for the pending batch but not yet committed.
  const fs::path journal = dir / kJournalFile;
  for (const auto& e : read_journal(journal)) {
    if (e.step != session.batch_id()) continue;
    const auto item = session.find_item(e.crop_id);
    if (!item) throw ParseError("journal names unknown item '" + e.crop_id + "'");
    session.record_label(*item, session.data().classes.index_of(e.label));
  }
  // Drop a torn final record so later appends start on a fresh line.
  if (fs::exists(journal)) {
    const std::string text = read_text_file(journal);
    const std::size_t keep = text.rfind('\n') == std::string::npos ? 0 : text.rfind('\n') + 1;
    if (keep != text.size()) fs::resize_file(journal, keep);
  }
  SessionStore store(dir, pool_dir, std::move(session));
  store.persist();
  if (store.session_.ready_to_commit()) store.commit();
  return store;
}

void SessionStore::append_journal(const JournalEntry& e) {
  const std::string line = format_journal_line(e);
  const fs::path path = dir_ / kJournalFile;
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw std::runtime_error("cannot open " + path.string() + ": " + std::strerror(errno));
  std::size_t done = 0;
  while (done < line.size()) {
    const ssize_t n = ::write(fd, line.data() + done, line.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      ::close(fd);
      throw std::runtime_error("cannot append to " + path.string() + ": " + std::strerror(err));
    }
    done += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
}

RecordResult SessionStore::submit(Index item, int label, std::string_view oracle_kind) {
  // Validate before journaling so the journal only holds answers that apply.
  if (session_.check_label(item, label) == RecordResult::Duplicate) return RecordResult::Duplicate;
  append_journal({session_.batch_id(), session_.item_id(item), session_.data().classes.name(label), now_seconds(),
                  std::string(oracle_kind)});
  fire("journaled");
  return session_.record_label(item, label);
}

void SessionStore::commit() {
  Session next = session_;
  next.commit();
  install(std::move(next));
}

void SessionStore::install(Session next) {
  fire("committed");
  session_ = std::move(next);
  persist();
}

void SessionStore::step(Oracle& oracle) {
  const auto todo = session_.unanswered();
  std::vector<std::string> ids;
  for (const Index i : todo) ids.push_back(session_.item_id(i));
  const auto labels = oracle.label(ids);
  if (labels.size() != ids.size()) throw ValidationError("oracle returned the wrong number of labels");
  for (std::size_t k = 0; k < todo.size(); ++k) submit(todo[k], labels[k], oracle.kind());
  commit();
}

void SessionStore::run(Oracle& oracle) {
  while (session_.phase() != Phase::Done) step(oracle);
}

void SessionStore::persist() {
  write_file_atomic(dir_ / kStateFile, session_.save());
  fire("state_written");
  if (const auto ckpt = session_.embedding_checkpoint())
    write_file_atomic(dir_ / "embedding.ckpt.json", save_embedding_checkpoint(*ckpt));
  if (const auto ckpt = session_.classifier_checkpoint())
    write_file_atomic(dir_ / "classifier.ckpt.json", save_classifier_checkpoint(*ckpt));
  write_file_atomic(dir_ / "curve.csv", format_curve_csv(session_.history()));
  write_file_atomic(dir_ / "selections.csv", format_selections_csv(session_.audit()));
}

}  // namespace traplab
