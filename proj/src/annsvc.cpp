// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "prefedit/annsvc.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

// httplib defaults to a backlog of 5, too small for bursts of new annotators.
#define CPPHTTPLIB_LISTEN_BACKLOG 128
#include <httplib.h>

#include "prefedit/random.hpp"
#include "prefedit/subjective.hpp"

namespace prefedit::annsvc {

std::string_view to_string(TaskKind k) { return k == TaskKind::kRanking ? "ranking" : "scoring"; }

TaskKind task_kind_from_string(std::string_view s) {
  if (s == "ranking") return TaskKind::kRanking;
  if (s == "scoring") return TaskKind::kScoring;
  throw ValidationError("unknown task kind '" + std::string(s) + "'");
}

std::string_view to_string(SessionState s) {
  switch (s) {
    case SessionState::kPretest: return "pretest";
    case SessionState::kQualified: return "qualified";
    case SessionState::kRejected: return "rejected";
    case SessionState::kActive: return "active";
    case SessionState::kFinished: return "finished";
  }
  return "unknown";
}

namespace {

SessionState session_state_from_string(std::string_view s) {
  for (auto st : {SessionState::kPretest, SessionState::kQualified, SessionState::kRejected, SessionState::kActive,
                  SessionState::kFinished})
    if (to_string(st) == s) return st;
  throw ParseError("unknown session state '" + std::string(s) + "'");
}

Task task_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("task is not an object");
  Task t;
  t.task_id = get_string(j, "task_id");
  t.kind = task_kind_from_string(get_string(j, "kind"));
  t.group_id = j.value("group_id", "");
  try {
    t.members = j.at("members").get<std::vector<std::string>>();
    t.image_refs = j.value("image_refs", std::map<std::string, std::string>{});
  } catch (const Json::exception& e) {
    throw ParseError("task '" + t.task_id + "': " + e.what());
  }
  t.source_ref = j.value("source_ref", "");
  t.prompt = j.value("prompt", "");
  t.test_split = j.value("test_split", false);
  return t;
}

Json task_config_json(const Task& t) {
  Json j = task_json(t);
  j.erase("dimensions");
  j["test_split"] = t.test_split;
  return j;
}

Json gold_answer_json(const GoldAnswer& a, TaskKind kind) {
  Json j = {{"dimension", to_string(a.dimension)}};
  if (kind == TaskKind::kRanking) {
    j["winner"] = a.winner;
    j["loser"] = a.loser;
  } else {
    j["lo"] = a.lo;
    j["hi"] = a.hi;
  }
  return j;
}

std::int64_t wall_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Body of an already-validated event; no membership checks.
ResponseBody body_from_event(TaskKind kind, const Json& j) {
  if (kind == TaskKind::kRanking) {
    RankingBody b;
    for (Dimension d : kAllDimensions) b.orders[index_of(d)] = j.at(std::string(to_string(d))).get<std::vector<std::string>>();
    return b;
  }
  ScoringBody b;
  for (Dimension d : kAllDimensions) b.values[index_of(d)] = j.at(std::string(to_string(d))).get<double>();
  return b;
}

Json session_json(const Session& s) {
  return {{"session_id", s.session_id},
          {"annotator_id", s.annotator_id},
          {"state", to_string(s.state)},
          {"gold_queue", s.gold_queue},
          {"assigned_queue", s.assigned_queue},
          {"answered", s.answered},
          {"created_at", s.created_at},
          {"gold_correct", s.gold_correct}};
}

Session session_from_json(const Json& j) {
  Session s;
  s.session_id = j.at("session_id").get<std::string>();
  s.annotator_id = j.at("annotator_id").get<std::string>();
  s.state = session_state_from_string(j.at("state").get<std::string>());
  s.gold_queue = j.at("gold_queue").get<std::vector<std::string>>();
  s.assigned_queue = j.at("assigned_queue").get<std::vector<std::string>>();
  s.answered = j.at("answered").get<std::set<std::string>>();
  s.created_at = j.at("created_at").get<std::int64_t>();
  s.gold_correct = j.at("gold_correct").get<std::size_t>();
  return s;
}

Json record_json(const ResponseRecord& r) {
  return {{"seq", r.seq},
          {"session_id", r.session_id},
          {"task_id", r.task_id},
          {"kind", to_string(r.kind)},
          {"body", body_json(r.body)},
          {"received_at", r.received_at},
          {"idempotency_key", r.idempotency_key}};
}

ResponseRecord record_from_json(const Json& j) {
  ResponseRecord r;
  r.seq = j.at("seq").get<std::uint64_t>();
  r.session_id = j.at("session_id").get<std::string>();
  r.task_id = j.at("task_id").get<std::string>();
  r.kind = task_kind_from_string(j.at("kind").get<std::string>());
  r.body = body_from_event(r.kind, j.at("body"));
  r.received_at = j.at("received_at").get<std::int64_t>();
  r.idempotency_key = j.at("idempotency_key").get<std::string>();
  return r;
}

}  // namespace

// --- configuration ----------------------------------------------------------

std::size_t CampaignConfig::target_of(const Task& t) const {
  if (t.kind == TaskKind::kRanking) return redundancy.ranking;
  return t.test_split ? redundancy.scoring_test : redundancy.scoring;
}

void CampaignConfig::validate() const {
  if (campaign_id.empty()) throw ValidationError("campaign_id must not be empty");
  if (redundancy.ranking == 0 || redundancy.scoring == 0 || redundancy.scoring_test == 0)
    throw ValidationError("redundancy targets must be positive");
  if (!(gold_threshold >= 0.0 && gold_threshold <= 1.0)) throw ValidationError("gold_threshold must lie in [0, 1]");
  if (gold_count == 0) throw ValidationError("gold_count must be positive");
  if (gold.size() < gold_count)
    throw ValidationError("campaign has " + std::to_string(gold.size()) + " gold tasks, needs " +
                          std::to_string(gold_count));
  std::set<std::string> ids;
  auto check_task = [&](const Task& t) {
    if (t.task_id.empty()) throw ValidationError("task with empty task_id");
    if (!ids.insert(t.task_id).second) throw ValidationError("duplicate task_id '" + t.task_id + "'");
    std::set<std::string> members(t.members.begin(), t.members.end());
    if (members.size() != t.members.size()) throw ValidationError("task '" + t.task_id + "' repeats a member");
    if (t.kind == TaskKind::kRanking && t.members.size() < 2)
      throw ValidationError("ranking task '" + t.task_id + "' needs at least two members");
    if (t.kind == TaskKind::kScoring && t.members.size() != 1)
      throw ValidationError("scoring task '" + t.task_id + "' needs exactly one member");
  };
  for (const auto& t : tasks) check_task(t);
  for (const auto& g : gold) {
    check_task(g.task);
    const auto& m = g.task.members;
    if (g.task.kind == TaskKind::kRanking) {
      if (std::find(m.begin(), m.end(), g.expected.winner) == m.end() ||
          std::find(m.begin(), m.end(), g.expected.loser) == m.end() || g.expected.winner == g.expected.loser)
        throw ValidationError("gold task '" + g.task.task_id + "' expects members outside the group");
    } else if (!(g.expected.lo >= 1.0 && g.expected.hi <= 5.0 && g.expected.lo <= g.expected.hi)) {
      throw ValidationError("gold task '" + g.task.task_id + "' has an interval outside [1, 5]");
    }
  }
}

CampaignConfig campaign_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("campaign config is not an object");
  CampaignConfig c;
  try {
    c.campaign_id = j.value("campaign_id", c.campaign_id);
    c.seed = j.value("seed", c.seed);
    if (j.contains("redundancy")) {
      const Json& r = j["redundancy"];
      c.redundancy.ranking = r.value("ranking", c.redundancy.ranking);
      c.redundancy.scoring = r.value("scoring", c.redundancy.scoring);
      c.redundancy.scoring_test = r.value("scoring_test", c.redundancy.scoring_test);
    }
    c.gold_count = j.value("gold_count", c.gold_count);
    c.gold_threshold = j.value("gold_threshold", c.gold_threshold);
    c.reject_duplicate_sessions = j.value("reject_duplicate_sessions", c.reject_duplicate_sessions);
    c.snapshot_every = j.value("snapshot_every", c.snapshot_every);
  } catch (const Json::exception& e) {
    throw ParseError(std::string("campaign config: ") + e.what());
  }
  for (const auto& t : j.value("tasks", Json::array())) c.tasks.push_back(task_from_json(t));
  for (const auto& g : j.value("gold", Json::array())) {
    GoldTask gt;
    gt.task = task_from_json(g.at("task"));
    const Json& e = g.at("expected");
    gt.expected.dimension = dimension_from_string(get_string(e, "dimension"));
    if (gt.task.kind == TaskKind::kRanking) {
      gt.expected.winner = get_string(e, "winner");
      gt.expected.loser = get_string(e, "loser");
    } else {
      gt.expected.lo = get_number(e, "lo");
      gt.expected.hi = get_number(e, "hi");
    }
    c.gold.push_back(std::move(gt));
  }
  return c;
}

Json to_json(const CampaignConfig& c) {
  Json tasks = Json::array(), gold = Json::array();
  for (const auto& t : c.tasks) tasks.push_back(task_config_json(t));
  for (const auto& g : c.gold)
    gold.push_back({{"task", task_config_json(g.task)}, {"expected", gold_answer_json(g.expected, g.task.kind)}});
  return {{"campaign_id", c.campaign_id},
          {"seed", c.seed},
          {"redundancy",
           {{"ranking", c.redundancy.ranking},
            {"scoring", c.redundancy.scoring},
            {"scoring_test", c.redundancy.scoring_test}}},
          {"gold_count", c.gold_count},
          {"gold_threshold", c.gold_threshold},
          {"reject_duplicate_sessions", c.reject_duplicate_sessions},
          {"snapshot_every", c.snapshot_every},
          {"tasks", tasks},
          {"gold", gold}};
}

CampaignConfig load_campaign(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw ParseError("campaign " + path.string() + ": " + e.what());
  }
  CampaignConfig c = campaign_from_json(j);
  // Tasks may also come from a manifest, resolved relative to the config file.
  if (j.contains("manifest")) {
    std::filesystem::path m = get_string(j, "manifest");
    if (m.is_relative()) m = path.parent_path() / m;
    for (auto& t : tasks_from_manifest(data::load_manifest(m))) c.tasks.push_back(std::move(t));
  }
  c.validate();
  return c;
}

std::vector<Task> tasks_from_manifest(const data::Manifest& m) {
  std::vector<Task> out;
  for (const auto& [source_id, members] : m.groups()) {
    const data::SourceItem* s = m.find_source(source_id);
    if (members.size() < 2) continue;
    Task t;
    t.task_id = "rank:" + source_id;
    t.kind = TaskKind::kRanking;
    t.group_id = source_id;
    t.members = members;
    t.source_ref = s->image_ref;
    t.prompt = s->prompt_instruction.empty() ? s->prompt_description.value_or("") : s->prompt_instruction;
    for (const auto& id : members) t.image_refs[id] = m.find_edition(id)->image_ref;
    out.push_back(std::move(t));
  }
  for (const auto& e : m.editions) {
    const data::SourceItem* s = m.find_source(e.source_id);
    Task t;
    t.task_id = "score:" + e.edited_id;
    t.kind = TaskKind::kScoring;
    t.group_id = e.source_id;
    t.members = {e.edited_id};
    t.source_ref = s->image_ref;
    t.prompt = s->prompt_instruction.empty() ? s->prompt_description.value_or("") : s->prompt_instruction;
    t.image_refs[e.edited_id] = e.image_ref;
    auto it = m.split.find(e.edited_id);
    t.test_split = it != m.split.end() && it->second == data::Split::kTest;
    out.push_back(std::move(t));
  }
  return out;
}

Json task_json(const Task& t) {
  return {{"task_id", t.task_id},
          {"kind", to_string(t.kind)},
          {"group_id", t.group_id},
          {"members", t.members},
          {"source_ref", t.source_ref},
          {"image_refs", t.image_refs},
          {"prompt", t.prompt},
          {"dimensions", {"quality", "alignment", "preservation"}}};
}

// --- bodies -----------------------------------------------------------------

ResponseBody parse_body(const Task& task, const Json& body) {
  if (!body.is_object()) throw ValidationError("response body must be an object");
  for (const auto& [k, _] : body.items()) {
    try {
      dimension_from_string(k);
    } catch (const Error&) {
      throw ValidationError("unexpected body field '" + k + "'");
    }
  }
  if (task.kind == TaskKind::kRanking) {
    RankingBody b;
    const std::set<std::string> members(task.members.begin(), task.members.end());
    for (Dimension d : kAllDimensions) {
      const std::string key(to_string(d));
      if (!body.contains(key) || !body[key].is_array()) throw ValidationError("missing " + key + " order");
      std::vector<std::string> order;
      for (const auto& v : body[key]) {
        if (!v.is_string()) throw ValidationError(key + " order must list edited ids");
        order.push_back(v.get<std::string>());
      }
      const std::set<std::string> seen(order.begin(), order.end());
      if (seen.size() != order.size()) throw ValidationError(key + " order repeats an item");
      if (seen != members) throw ValidationError(key + " order is not a permutation of the group");
      b.orders[index_of(d)] = std::move(order);
    }
    return b;
  }
  ScoringBody b;
  for (Dimension d : kAllDimensions) {
    const std::string key(to_string(d));
    if (!body.contains(key) || !body[key].is_number()) throw ValidationError("missing " + key + " score");
    const double v = body[key].get<double>();
    if (!(v >= 1.0 && v <= 5.0)) throw ValidationError(key + " score outside [1, 5]");
    b.values[index_of(d)] = v;
  }
  return b;
}

Json body_json(const ResponseBody& body) {
  Json j = Json::object();
  if (const auto* r = std::get_if<RankingBody>(&body)) {
    for (Dimension d : kAllDimensions) j[std::string(to_string(d))] = r->orders[index_of(d)];
  } else {
    const auto& s = std::get<ScoringBody>(body);
    for (Dimension d : kAllDimensions) j[std::string(to_string(d))] = s.values[index_of(d)];
  }
  return j;
}

Json Ack::json() const {
  return {{"seq", seq},
          {"session_id", session_id},
          {"task_id", task_id},
          {"idempotency_key", idempotency_key},
          {"duplicate", duplicate}};
}

// --- state fold ---------------------------------------------------------------

void CampaignState::apply(const Json& e) {
  const std::string type = e.value("type", "");
  const std::int64_t ts = e.value("ts", std::int64_t{0});
  try {
    if (type == "session") {
      Session s;
      s.session_id = e.at("session_id").get<std::string>();
      s.annotator_id = e.at("annotator_id").get<std::string>();
      s.gold_queue = e.at("gold_queue").get<std::vector<std::string>>();
      s.created_at = ts;
      sessions_[s.session_id] = std::move(s);
    } else if (type == "qualify") {
      Session& s = sessions_.at(e.at("session_id").get<std::string>());
      s.gold_correct = e.at("correct").get<std::size_t>();
      s.state = e.at("qualified").get<bool>() ? SessionState::kQualified : SessionState::kRejected;
    } else if (type == "assign") {
      Session& s = sessions_.at(e.at("session_id").get<std::string>());
      const std::string task = e.at("task_id").get<std::string>();
      s.assigned_queue.push_back(task);
      seen_[s.annotator_id].insert(task);
      if (s.state == SessionState::kQualified) s.state = SessionState::kActive;
    } else if (type == "finish") {
      sessions_.at(e.at("session_id").get<std::string>()).state = SessionState::kFinished;
    } else if (type == "response") {
      ResponseRecord r;
      r.seq = e.at("seq").get<std::uint64_t>();
      r.session_id = e.at("session_id").get<std::string>();
      r.task_id = e.at("task_id").get<std::string>();
      r.kind = task_kind_from_string(e.at("kind").get<std::string>());
      r.body = body_from_event(r.kind, e.at("body"));
      r.received_at = ts;
      r.idempotency_key = e.at("idempotency_key").get<std::string>();
      sessions_.at(r.session_id).answered.insert(r.task_id);
      ++accepted_[r.task_id];
      response_by_key_[r.idempotency_key] = responses_.size();
      responses_.push_back(std::move(r));
    } else {
      throw ParseError("unknown event type '" + type + "'");
    }
  } catch (const Json::exception& ex) {
    throw ParseError("malformed " + type + " event: " + ex.what());
  } catch (const std::out_of_range&) {
    throw IntegrityError(type + " event refers to an unknown session");
  }
  ++n_events_;
}

std::size_t CampaignState::accepted(const std::string& task_id) const {
  auto it = accepted_.find(task_id);
  return it == accepted_.end() ? 0 : it->second;
}

const ResponseRecord* CampaignState::find_by_key(const std::string& key) const {
  auto it = response_by_key_.find(key);
  return it == response_by_key_.end() ? nullptr : &responses_[it->second];
}

const std::set<std::string>& CampaignState::seen_by(const std::string& annotator_id) const {
  static const std::set<std::string> kEmpty;
  auto it = seen_.find(annotator_id);
  return it == seen_.end() ? kEmpty : it->second;
}

Json CampaignState::to_json() const {
  Json sessions = Json::array(), responses = Json::array();
  for (const auto& [_, s] : sessions_) sessions.push_back(session_json(s));
  for (const auto& r : responses_) responses.push_back(record_json(r));
  return {{"n_events", n_events_}, {"sessions", sessions}, {"responses", responses}, {"seen", seen_}};
}

CampaignState CampaignState::from_json(const CampaignConfig* config, const Json& j) {
  CampaignState st(config);
  try {
    st.n_events_ = j.at("n_events").get<std::size_t>();
    for (const auto& s : j.at("sessions")) {
      Session sess = session_from_json(s);
      st.sessions_[sess.session_id] = std::move(sess);
    }
    for (const auto& r : j.at("responses")) {
      ResponseRecord rec = record_from_json(r);
      ++st.accepted_[rec.task_id];
      st.response_by_key_[rec.idempotency_key] = st.responses_.size();
      st.responses_.push_back(std::move(rec));
    }
    st.seen_ = j.at("seen").get<std::map<std::string, std::set<std::string>>>();
  } catch (const Json::exception& e) {
    throw ParseError(std::string("bad campaign state: ") + e.what());
  }
  return st;
}

// --- durable log -----------------------------------------------------------------

ResponseLog::ResponseLog(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  const bool existed = std::filesystem::exists(path_);
  fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error("cannot open log " + path_.string() + ": " + std::strerror(errno));
  struct stat st {};
  fstat(fd_, &st);
  std::uint64_t size = static_cast<std::uint64_t>(st.st_size);
  if (size > 0) {
    // Drop a partial record left by a crash mid-write.
    const std::string text = read_text(path_);
    const auto last_nl = text.rfind('\n');
    const std::uint64_t keep = last_nl == std::string::npos ? 0 : last_nl + 1;
    if (keep != size) {
      if (ftruncate(fd_, static_cast<off_t>(keep)) != 0 || fdatasync(fd_) != 0)
        throw Error("cannot repair log " + path_.string());
      size = keep;
    }
  }
  size_ = size;
  if (!existed) {
    const auto dir = path_.has_parent_path() ? path_.parent_path() : std::filesystem::path(".");
    int dfd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
    if (dfd >= 0) {
      fsync(dfd);
      ::close(dfd);
    }
  }
}

ResponseLog::~ResponseLog() {
  if (fd_ >= 0) ::close(fd_);
}

std::uint64_t ResponseLog::append(const Json& event) {
  const std::string line = event.dump() + "\n";
  std::size_t off = 0;
  while (off < line.size()) {
    ssize_t n = ::write(fd_, line.data() + off, line.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      const std::string err = std::strerror(errno);
      if (ftruncate(fd_, static_cast<off_t>(size_)) != 0) {
        // Nothing more to do; the next open drops the torn tail.
      }
      throw Error("log append failed: " + err);
    }
    off += static_cast<std::size_t>(n);
  }
  if (fdatasync(fd_) != 0) throw Error(std::string("log sync failed: ") + std::strerror(errno));
  size_ += line.size();
  return size_;
}

std::vector<Json> ResponseLog::read(const std::filesystem::path& path, std::uint64_t offset) {
  std::vector<Json> out;
  if (!std::filesystem::exists(path)) return out;
  const std::string text = read_text(path);
  if (offset > text.size()) throw IntegrityError("log offset past end of " + path.string());
  std::size_t pos = offset, line = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) break;  // torn tail
    ++line;
    try {
      out.push_back(Json::parse(text.begin() + static_cast<std::ptrdiff_t>(pos),
                                text.begin() + static_cast<std::ptrdiff_t>(nl)));
    } catch (const Json::parse_error& e) {
      throw ParseError(std::string("corrupt log record: ") + e.what(), line);
    }
    pos = nl + 1;
  }
  return out;
}

// --- export -------------------------------------------------------------------------

Export export_raw(const CampaignState& state) {
  std::map<std::string, const Task*> tasks;
  if (state.config())
    for (const auto& t : state.config()->tasks) tasks[t.task_id] = &t;
  Export out;
  for (const auto& r : state.responses()) {
    const std::string& annotator = state.sessions().at(r.session_id).annotator_id;
    auto it = tasks.find(r.task_id);
    const Task* t = it == tasks.end() ? nullptr : it->second;
    if (const auto* rb = std::get_if<RankingBody>(&r.body)) {
      std::string group = t ? t->group_id : r.task_id.rfind("rank:", 0) == 0 ? r.task_id.substr(5) : r.task_id;
      for (Dimension d : kAllDimensions) {
        subjective::RawRanking rk{annotator, group, d, rb->orders[index_of(d)]};
        out.rankings += subjective::to_json(rk).dump() + "\n";
      }
    } else {
      const auto& sb = std::get<ScoringBody>(r.body);
      std::string edited =
          t ? t->members.front() : r.task_id.rfind("score:", 0) == 0 ? r.task_id.substr(6) : r.task_id;
      for (Dimension d : kAllDimensions) {
        subjective::RawRating rt{annotator, edited, d, sb.values[index_of(d)]};
        out.ratings += subjective::to_json(rt).dump() + "\n";
      }
    }
  }
  return out;
}

// --- campaign ---------------------------------------------------------------------

Campaign::Campaign(CampaignConfig config, const std::filesystem::path& log_path,
                   std::optional<std::filesystem::path> snapshot_path)
    : config_(std::move(config)), state_(&config_), snapshot_path_(std::move(snapshot_path)), clock_(wall_clock_ms) {
  config_.validate();
  for (std::size_t i = 0; i < config_.tasks.size(); ++i) task_index_[config_.tasks[i].task_id] = i;
  for (std::size_t i = 0; i < config_.gold.size(); ++i) gold_index_[config_.gold[i].task.task_id] = i;

  log_ = std::make_unique<ResponseLog>(log_path);
  std::uint64_t offset = 0;
  if (snapshot_path_ && std::filesystem::exists(*snapshot_path_)) {
    // A snapshot is only a shortcut; anything odd falls back to a full replay.
    try {
      const Json snap = Json::parse(read_text(*snapshot_path_));
      const auto off = snap.at("log_offset").get<std::uint64_t>();
      if (snap.value("campaign_id", "") == config_.campaign_id && off <= log_->size()) {
        state_ = CampaignState::from_json(&config_, snap.at("state"));
        offset = off;
      }
    } catch (const std::exception&) {
      state_ = CampaignState(&config_);
      offset = 0;
    }
  }
  for (const auto& e : ResponseLog::read(log_path, offset)) state_.apply(e);
}

void Campaign::commit(const Json& event) {
  log_->append(event);
  if (after_append_) after_append_(event);
  state_.apply(event);
  if (config_.snapshot_every && snapshot_path_ && state_.event_count() % config_.snapshot_every == 0) {
    Json snap = {{"format", "prefedit.campaign-snapshot"},
                 {"version", 1},
                 {"campaign_id", config_.campaign_id},
                 {"log_offset", log_->size()},
                 {"state", state_.to_json()}};
    write_text(*snapshot_path_, snap.dump() + "\n");
  }
}

void Campaign::write_snapshot() {
  std::unique_lock lock(mu_);
  if (!snapshot_path_) throw UnsupportedError("campaign has no snapshot path");
  Json snap = {{"format", "prefedit.campaign-snapshot"},
               {"version", 1},
               {"campaign_id", config_.campaign_id},
               {"log_offset", log_->size()},
               {"state", state_.to_json()}};
  write_text(*snapshot_path_, snap.dump() + "\n");
}

const Task& Campaign::task(const std::string& task_id) const {
  auto it = task_index_.find(task_id);
  if (it == task_index_.end()) throw NotFoundError("unknown task '" + task_id + "'");
  return config_.tasks[it->second];
}

const GoldTask& Campaign::gold(const std::string& task_id) const {
  auto it = gold_index_.find(task_id);
  if (it == gold_index_.end()) throw NotFoundError("unknown gold task '" + task_id + "'");
  return config_.gold[it->second];
}

const Session& Campaign::session_ref(const std::string& session_id) const {
  auto it = state_.sessions().find(session_id);
  if (it == state_.sessions().end()) throw NotFoundError("unknown session '" + session_id + "'");
  return it->second;
}

Session Campaign::create_session(const std::string& annotator_id) {
  if (annotator_id.empty()) throw ValidationError("annotator_id must not be empty");
  std::unique_lock lock(mu_);
  if (config_.reject_duplicate_sessions) {
    for (const auto& [_, s] : state_.sessions()) {
      if (s.annotator_id != annotator_id) continue;
      if (s.state == SessionState::kRejected) throw ConflictError("annotator '" + annotator_id + "' failed qualification");
      if (s.state != SessionState::kFinished)
        throw ConflictError("annotator '" + annotator_id + "' already has an open session");
    }
  }
  const std::string id =
      "s-" + hex16(Rng::derive_seed(config_.seed, config_.campaign_id + ":session:" +
                                                      std::to_string(state_.sessions().size())));
  std::vector<std::string> gold_ids;
  for (const auto& g : config_.gold) gold_ids.push_back(g.task.task_id);
  Rng rng = Rng::substream(config_.seed, "gold:" + id);
  rng.shuffle(gold_ids);
  gold_ids.resize(config_.gold_count);
  commit({{"type", "session"}, {"session_id", id}, {"annotator_id", annotator_id}, {"gold_queue", gold_ids},
          {"ts", clock_()}});
  return state_.sessions().at(id);
}

Session Campaign::submit_gold(const std::string& session_id, const Json& answers) {
  std::unique_lock lock(mu_);
  const Session& s = session_ref(session_id);
  if (s.state != SessionState::kPretest)
    throw ConflictError("qualification for session '" + session_id + "' is already decided");
  if (!answers.is_array()) throw ValidationError("gold answers must be an array");
  std::map<std::string, Json> by_task;
  for (const auto& a : answers) {
    if (!a.is_object() || !a.contains("task_id") || !a["task_id"].is_string() || !a.contains("body"))
      throw ValidationError("each gold answer needs task_id and body");
    if (!by_task.emplace(a["task_id"].get<std::string>(), a["body"]).second)
      throw ValidationError("gold task answered twice");
  }
  const std::set<std::string> queue(s.gold_queue.begin(), s.gold_queue.end());
  for (const auto& [id, _] : by_task)
    if (!queue.count(id)) throw ValidationError("gold task '" + id + "' is not in this session's queue");
  if (by_task.size() != queue.size())
    throw ValidationError("incomplete gold queue: " + std::to_string(by_task.size()) + " of " +
                          std::to_string(queue.size()) + " answered");
  std::size_t correct = 0;
  for (const auto& id : s.gold_queue) {
    const GoldTask& g = gold(id);
    const ResponseBody body = parse_body(g.task, by_task.at(id));
    const std::size_t d = index_of(g.expected.dimension);
    if (const auto* rb = std::get_if<RankingBody>(&body)) {
      const auto& order = rb->orders[d];
      auto w = std::find(order.begin(), order.end(), g.expected.winner);
      auto l = std::find(order.begin(), order.end(), g.expected.loser);
      correct += w < l;
    } else {
      const double v = std::get<ScoringBody>(body).values[d];
      correct += v >= g.expected.lo && v <= g.expected.hi;
    }
  }
  const std::size_t total = s.gold_queue.size();
  const bool qualified =
      static_cast<double>(correct) >= config_.gold_threshold * static_cast<double>(total) - 1e-12;
  Json echo = Json::object();
  for (const auto& [id, body] : by_task) echo[id] = body;
  commit({{"type", "qualify"}, {"session_id", session_id}, {"correct", correct}, {"total", total},
          {"qualified", qualified}, {"answers", echo}, {"ts", clock_()}});
  return state_.sessions().at(session_id);
}

TaskOffer Campaign::next_task(const std::string& session_id) {
  std::unique_lock lock(mu_);
  const Session& s = session_ref(session_id);
  if (s.state == SessionState::kFinished) return {true, nullptr};
  if (s.state != SessionState::kQualified && s.state != SessionState::kActive)
    throw ConflictError("session '" + session_id + "' is " + std::string(to_string(s.state)));
  // An unanswered assignment is offered again until it is answered or fills up.
  for (const auto& id : s.assigned_queue) {
    const Task& t = task(id);
    if (!s.answered.count(id) && state_.accepted(id) < config_.target_of(t)) return {false, &t};
  }
  const auto& seen = state_.seen_by(s.annotator_id);
  std::vector<const Task*> eligible;
  for (const auto& t : config_.tasks)
    if (!seen.count(t.task_id) && state_.accepted(t.task_id) < config_.target_of(t)) eligible.push_back(&t);
  if (eligible.empty()) {
    commit({{"type", "finish"}, {"session_id", session_id}, {"ts", clock_()}});
    return {true, nullptr};
  }
  Rng rng = Rng::substream(config_.seed, "assign:" + session_id + ":" + std::to_string(s.assigned_queue.size()));
  const Task* pick = eligible[rng.below(eligible.size())];
  commit({{"type", "assign"}, {"session_id", session_id}, {"task_id", pick->task_id}, {"ts", clock_()}});
  return {false, pick};
}

Ack Campaign::submit_response(const std::string& session_id, const std::string& idempotency_key,
                              const Json& request) {
  if (idempotency_key.empty()) throw ValidationError("an Idempotency-Key is required");
  if (!request.is_object() || !request.contains("task_id") || !request["task_id"].is_string() ||
      !request.contains("body"))
    throw ValidationError("response needs task_id and body");
  const std::string task_id = request["task_id"].get<std::string>();
  std::unique_lock lock(mu_);
  if (const ResponseRecord* prior = state_.find_by_key(idempotency_key)) {
    if (prior->session_id != session_id || prior->task_id != task_id)
      throw ConflictError("Idempotency-Key was used for a different response");
    return {prior->seq, prior->session_id, prior->task_id, idempotency_key, true};
  }
  const Session& s = session_ref(session_id);
  const Task& t = task(task_id);
  if (s.state != SessionState::kActive)
    throw ConflictError("session '" + session_id + "' is " + std::string(to_string(s.state)));
  if (std::find(s.assigned_queue.begin(), s.assigned_queue.end(), task_id) == s.assigned_queue.end())
    throw ConflictError("task '" + task_id + "' is not assigned to this session");
  if (s.answered.count(task_id)) throw ConflictError("task '" + task_id + "' was already answered");
  if (state_.accepted(task_id) >= config_.target_of(t))
    throw ConflictError("task '" + task_id + "' is at its redundancy target");
  const ResponseBody body = parse_body(t, request["body"]);
  const std::uint64_t seq = state_.responses().size() + 1;
  commit({{"type", "response"}, {"seq", seq}, {"session_id", session_id}, {"task_id", task_id},
          {"kind", to_string(t.kind)}, {"body", body_json(body)}, {"idempotency_key", idempotency_key},
          {"ts", clock_()}});
  return {seq, session_id, task_id, idempotency_key, false};
}

Session Campaign::session(const std::string& session_id) const {
  std::shared_lock lock(mu_);
  auto it = state_.sessions().find(session_id);
  if (it == state_.sessions().end()) throw NotFoundError("unknown session '" + session_id + "'");
  return it->second;
}

Json Campaign::progress() const {
  std::shared_lock lock(mu_);
  std::size_t complete = 0, responses = state_.responses().size();
  std::map<std::string, std::size_t> by_state;
  for (const auto& t : config_.tasks) complete += state_.accepted(t.task_id) >= config_.target_of(t);
  for (const auto& [_, s] : state_.sessions()) ++by_state[std::string(to_string(s.state))];
  return {{"campaign_id", config_.campaign_id}, {"n_tasks", config_.tasks.size()}, {"complete_tasks", complete},
          {"accepted_responses", responses},    {"sessions", by_state},            {"events", state_.event_count()}};
}

Export Campaign::export_raw() const {
  std::shared_lock lock(mu_);
  return annsvc::export_raw(state_);
}

Json Campaign::state_json() const {
  std::shared_lock lock(mu_);
  return state_.to_json();
}

// --- HTTP ----------------------------------------------------------------------------

struct HttpServer::Impl {
  Campaign& campaign;
  httplib::Server server;
  explicit Impl(Campaign& c) : campaign(c) {}
};

namespace {

Json parse_request(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  try {
    return Json::parse(req.body);
  } catch (const Json::parse_error& e) {
    throw ValidationError(std::string("request body is not JSON: ") + e.what());
  }
}

template <typename F>
httplib::Server::Handler guarded(F fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    int status = 200;
    Json out;
    try {
      out = fn(req);
    } catch (const ValidationError& e) {
      status = 400;
      out = {{"error", e.what()}};
    } catch (const ParseError& e) {
      status = 400;
      out = {{"error", e.what()}};
    } catch (const NotFoundError& e) {
      status = 404;
      out = {{"error", e.what()}};
    } catch (const ConflictError& e) {
      status = 409;
      out = {{"error", e.what()}};
    } catch (const std::exception& e) {
      status = 500;
      out = {{"error", e.what()}};
    }
    res.status = status;
    res.set_content(out.dump(), "application/json");
  };
}

Json session_view(const Session& s) {
  return {{"session_id", s.session_id},     {"annotator_id", s.annotator_id}, {"state", to_string(s.state)},
          {"gold_correct", s.gold_correct}, {"gold_total", s.gold_queue.size()}};
}

}  // namespace

HttpServer::HttpServer(Campaign& campaign) : impl_(std::make_unique<Impl>(campaign)) {
  auto& srv = impl_->server;
  Campaign& c = campaign;
  srv.new_task_queue = [] { return new httplib::ThreadPool(32); };

  srv.Post("/sessions", guarded([&c](const httplib::Request& req) {
             const Json body = parse_request(req);
             if (!body.contains("annotator_id") || !body["annotator_id"].is_string())
               throw ValidationError("annotator_id is required");
             const Session s = c.create_session(body["annotator_id"].get<std::string>());
             Json gold = Json::array();
             for (const auto& id : s.gold_queue)
               for (const auto& g : c.config().gold)
                 if (g.task.task_id == id) gold.push_back(task_json(g.task));
             Json out = session_view(s);
             out["gold_tasks"] = gold;
             return out;
           }));
  srv.Get(R"(/sessions/([^/]+))", guarded([&c](const httplib::Request& req) {
            return session_view(c.session(req.matches[1]));
          }));
  srv.Post(R"(/sessions/([^/]+)/gold)", guarded([&c](const httplib::Request& req) {
             const Json body = parse_request(req);
             return session_view(c.submit_gold(req.matches[1], body.value("answers", Json())));
           }));
  srv.Get(R"(/sessions/([^/]+)/next)", guarded([&c](const httplib::Request& req) {
            const TaskOffer offer = c.next_task(req.matches[1]);
            if (offer.complete) return Json{{"complete", true}};
            return Json{{"complete", false}, {"task", task_json(*offer.task)}};
          }));
  srv.Post(R"(/sessions/([^/]+)/responses)", guarded([&c](const httplib::Request& req) {
             return c.submit_response(req.matches[1], req.get_header_value("Idempotency-Key"), parse_request(req))
                 .json();
           }));
  auto check_campaign = [&c](const httplib::Request& req) {
    if (req.matches[1] != c.config().campaign_id) throw NotFoundError("unknown campaign '" + req.matches[1].str() + "'");
  };
  srv.Get(R"(/campaigns/([^/]+)/progress)", guarded([&c, check_campaign](const httplib::Request& req) {
            check_campaign(req);
            return c.progress();
          }));
  srv.Get(R"(/campaigns/([^/]+)/export)", guarded([&c, check_campaign](const httplib::Request& req) {
            check_campaign(req);
            const Export e = c.export_raw();
            return Json{{"ratings", e.ratings}, {"rankings", e.rankings}};
          }));
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  auto& srv = impl_->server;
  if (port == 0) {
    const int p = srv.bind_to_any_port(host);
    if (p < 0) throw Error("cannot bind " + host);
    return p;
  }
  if (!srv.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace prefedit::annsvc
