// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Annotation campaign service.
//
// Every state change is an event appended (and fsynced) to a JSONL log before
// the caller sees an acknowledgement. The in-memory state is a pure fold over
// the event sequence, so a restart replays the log (optionally starting from
// a snapshot) and arrives at the same state.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include "prefedit/datamodel.hpp"
#include "prefedit/dimension.hpp"
#include "prefedit/error.hpp"
#include "prefedit/jsonl.hpp"

namespace prefedit::annsvc {

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

enum class TaskKind { kRanking, kScoring };
std::string_view to_string(TaskKind k);
TaskKind task_kind_from_string(std::string_view s);

struct Task {
  std::string task_id;
  TaskKind kind = TaskKind::kScoring;
  std::string group_id;              // ranking: source group
  std::vector<std::string> members;  // ranking: edited ids; scoring: the single edited id
  std::string source_ref;
  std::map<std::string, std::string> image_refs;  // edited id -> locator
  std::string prompt;
  bool test_split = false;  // scoring tasks on the test split use the larger target
};

/// Expected answer of a qualification task; never sent to clients.
struct GoldAnswer {
  Dimension dimension = Dimension::kQuality;
  // ranking: `winner` must precede `loser` in the order for `dimension`
  std::string winner;
  std::string loser;
  // scoring: the value for `dimension` must lie in [lo, hi]
  double lo = 1.0;
  double hi = 5.0;
};

struct GoldTask {
  Task task;
  GoldAnswer expected;
};

struct Redundancy {
  std::size_t ranking = 3;
  std::size_t scoring = 5;
  std::size_t scoring_test = 15;
};

struct CampaignConfig {
  std::string campaign_id = "default";
  std::uint64_t seed = 0;
  Redundancy redundancy;
  std::size_t gold_count = 10;
  double gold_threshold = 0.8;
  bool reject_duplicate_sessions = true;
  std::size_t snapshot_every = 0;  // events between snapshots; 0 disables
  std::vector<Task> tasks;
  std::vector<GoldTask> gold;

  std::size_t target_of(const Task& t) const;
  void validate() const;
};

CampaignConfig campaign_from_json(const Json& j);
Json to_json(const CampaignConfig& c);
CampaignConfig load_campaign(const std::filesystem::path& path);

/// One ranking task per source group and one scoring task per edition.
std::vector<Task> tasks_from_manifest(const data::Manifest& m);

/// Client-visible task payload (no gold answers).
Json task_json(const Task& t);

enum class SessionState { kPretest, kQualified, kRejected, kActive, kFinished };
std::string_view to_string(SessionState s);

struct Session {
  std::string session_id;
  std::string annotator_id;
  SessionState state = SessionState::kPretest;
  std::vector<std::string> gold_queue;
  std::vector<std::string> assigned_queue;
  std::set<std::string> answered;
  std::int64_t created_at = 0;
  std::size_t gold_correct = 0;
};

struct RankingBody {
  std::array<std::vector<std::string>, 3> orders;  // indexed by Dimension
};
struct ScoringBody {
  std::array<double, 3> values{};  // indexed by Dimension, each in [1, 5]
};
using ResponseBody = std::variant<RankingBody, ScoringBody>;

/// Parses and validates a body against its task. Throws ValidationError.
ResponseBody parse_body(const Task& task, const Json& body);
Json body_json(const ResponseBody& body);

struct ResponseRecord {
  std::uint64_t seq = 0;
  std::string session_id;
  std::string task_id;
  TaskKind kind = TaskKind::kScoring;
  ResponseBody body;
  std::int64_t received_at = 0;
  std::string idempotency_key;
};

struct Ack {
  std::uint64_t seq = 0;
  std::string session_id;
  std::string task_id;
  std::string idempotency_key;
  bool duplicate = false;

  Json json() const;
};

/// Deterministic fold over campaign events.
class CampaignState {
 public:
  explicit CampaignState(const CampaignConfig* config) : config_(config) {}

  /// Applies an already-validated event. Throws ParseError on an unknown type.
  void apply(const Json& event);

  const std::map<std::string, Session>& sessions() const { return sessions_; }
  const std::vector<ResponseRecord>& responses() const { return responses_; }
  std::size_t accepted(const std::string& task_id) const;
  const ResponseRecord* find_by_key(const std::string& key) const;
  std::size_t event_count() const { return n_events_; }
  const CampaignConfig* config() const { return config_; }
  /// Task ids the annotator has been assigned in any session.
  const std::set<std::string>& seen_by(const std::string& annotator_id) const;

  Json to_json() const;
  static CampaignState from_json(const CampaignConfig* config, const Json& j);

 private:
  const CampaignConfig* config_;
  std::map<std::string, Session> sessions_;
  std::vector<ResponseRecord> responses_;
  std::map<std::string, std::size_t> response_by_key_;
  std::map<std::string, std::size_t> accepted_;
  std::map<std::string, std::set<std::string>> seen_;
  std::size_t n_events_ = 0;
};

/// Append-only JSONL with fdatasync per record.
class ResponseLog {
 public:
  /// Opens (creating if needed) and truncates a torn trailing line.
  explicit ResponseLog(std::filesystem::path path);
  ~ResponseLog();
  ResponseLog(const ResponseLog&) = delete;
  ResponseLog& operator=(const ResponseLog&) = delete;

  /// Returns the byte offset after the record once it is durable.
  std::uint64_t append(const Json& event);
  std::uint64_t size() const { return size_; }
  const std::filesystem::path& path() const { return path_; }

  /// Complete records starting at `offset`.
  static std::vector<Json> read(const std::filesystem::path& path, std::uint64_t offset = 0);

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::uint64_t size_ = 0;
};

struct Export {
  std::string ratings;   // subjective ratings JSONL
  std::string rankings;  // subjective rankings JSONL
};

/// Raw-annotation export; depends only on the accepted responses.
Export export_raw(const CampaignState& state);

struct TaskOffer {
  bool complete = false;
  const Task* task = nullptr;
};

/// Thread-safe campaign service over a durable log.
class Campaign {
 public:
  using Clock = std::function<std::int64_t()>;
  using Hook = std::function<void(const Json& event)>;

  /// Recovers state from `snapshot` (if present) plus the log tail.
  Campaign(CampaignConfig config, const std::filesystem::path& log_path,
           std::optional<std::filesystem::path> snapshot_path = std::nullopt);

  const CampaignConfig& config() const { return config_; }

  Session create_session(const std::string& annotator_id);
  /// answers: [{"task_id", "body"}]; returns the resulting session.
  Session submit_gold(const std::string& session_id, const Json& answers);
  TaskOffer next_task(const std::string& session_id);
  Ack submit_response(const std::string& session_id, const std::string& idempotency_key, const Json& request);

  Session session(const std::string& session_id) const;
  Json progress() const;
  Export export_raw() const;
  Json state_json() const;

  void write_snapshot();

  /// Test hooks.
  void set_clock(Clock clock) { clock_ = std::move(clock); }
  void set_after_append(Hook hook) { after_append_ = std::move(hook); }

 private:
  void commit(const Json& event);
  const Task& task(const std::string& task_id) const;
  const GoldTask& gold(const std::string& task_id) const;
  const Session& session_ref(const std::string& session_id) const;

  CampaignConfig config_;
  std::map<std::string, std::size_t> task_index_;
  std::map<std::string, std::size_t> gold_index_;
  CampaignState state_;
  std::unique_ptr<ResponseLog> log_;
  std::optional<std::filesystem::path> snapshot_path_;
  mutable std::shared_mutex mu_;
  Clock clock_;
  Hook after_append_;
};

/// HTTP front end:
///   POST /sessions, POST /sessions/{id}/gold, GET /sessions/{id}/next,
///   POST /sessions/{id}/responses, GET /campaigns/{id}/progress,
///   GET /campaigns/{id}/export
class HttpServer {
 public:
  explicit HttpServer(Campaign& campaign);
  ~HttpServer();

  /// Binds (port 0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks serving requests until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace prefedit::annsvc
