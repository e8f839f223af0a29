#pragma once

#include "traplab/session.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace traplab {

/// One journaled oracle answer.
struct JournalEntry {
  Index step = 0;
  std::string crop_id;
  std::string label;
  double timestamp = 0;
  std::string oracle_kind;
};

std::string format_journal_line(const JournalEntry& e);
JournalEntry parse_journal_line(std::string_view line);

/// Reads a journal, dropping a trailing line cut short by a crash.
std::vector<JournalEntry> read_journal(const std::filesystem::path& path);

/// A session persisted in a directory:
///   config.json          pool directory and loop configuration
///   journal.ndjson       append-only oracle answers, written before use
///   state.json           last committed session state
///   embedding.ckpt.json  classifier.ckpt.json  curve.csv  selections.csv
/// Every file except the journal is replaced atomically. Opening replays
/// journal answers for the pending batch, so a crash between an answer and
/// the commit loses nothing and re-queries nothing.
class SessionStore {
 public:
  static SessionStore create(const std::filesystem::path& dir, const std::filesystem::path& pool_dir,
                             const LoopConfig& cfg, std::optional<EmbeddingCheckpoint> pretrained = {},
                             Clock clock = steady_clock_seconds());
  static SessionStore open(const std::filesystem::path& dir, Clock clock = steady_clock_seconds());

  const std::filesystem::path& directory() const { return dir_; }
  const std::filesystem::path& pool_directory() const { return pool_dir_; }
  const Session& session() const { return session_; }

  /// Journals a new answer, then records it. Duplicates are not journaled.
  RecordResult submit(Index item, int label, std::string_view oracle_kind);
  /// Commits the pending batch and persists the result.
  void commit();
  /// Replaces the session with an already committed successor of it and
  /// persists it (lets callers train outside their own locks).
  void install(Session next);
  /// Answers the unanswered pending items with `oracle`, then commits.
  void step(Oracle& oracle);
  void run(Oracle& oracle);

  /// Called with a point name at each durability boundary ("journaled",
  /// "committed", "state_written"). Used to inject crashes in tests.
  std::function<void(std::string_view)> hook;

 private:
  SessionStore(std::filesystem::path dir, std::filesystem::path pool_dir, Session session)
      : dir_(std::move(dir)), pool_dir_(std::move(pool_dir)), session_(std::move(session)) {}

  void persist();
  void append_journal(const JournalEntry& e);
  void fire(std::string_view point) {
    if (hook) hook(point);
  }

  std::filesystem::path dir_;
  std::filesystem::path pool_dir_;
  Session session_;
};

}  // namespace traplab
