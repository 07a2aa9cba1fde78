// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "prefedit/external_scorer.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <regex>

#include <httplib.h>

namespace prefedit::scorer {

ExternalConfig external_config_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("external scorer config is not an object");
  ExternalConfig c;
  const std::string transport = j.value("transport", "process");
  if (transport == "process") {
    c.transport = ExternalConfig::Transport::kProcess;
    if (!j.contains("command") || !j["command"].is_array() || j["command"].empty())
      throw ParseError("process transport needs a non-empty 'command' array");
    c.command = j["command"].get<std::vector<std::string>>();
  } else if (transport == "http") {
    c.transport = ExternalConfig::Transport::kHttp;
    c.url = get_string(j, "url");
  } else {
    throw ParseError("unknown transport '" + transport + "'");
  }
  if (j.contains("timeout_ms")) c.timeout = std::chrono::milliseconds(j["timeout_ms"].get<long>());
  return c;
}

Json scoring_request(const ScoringItem& item) {
  return {{"edited_id", item.edited_id},
          {"source_ref", item.source_ref},
          {"edited_ref", item.edited_ref},
          {"prompt", item.prompt},
          {"dimensions", {"quality", "alignment", "preservation"}}};
}

ScoreTriple parse_scoring_response(const std::string& body) {
  Json j;
  try {
    j = Json::parse(body);
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string("scorer response is not JSON: ") + e.what());
  }
  if (j.is_object() && j.contains("error")) throw Error("external scorer error: " + j["error"].dump());
  return score_triple_from_json(j);
}

// One long-lived child speaking newline-delimited JSON.
class ExternalScorer::ChildProcess {
 public:
  explicit ChildProcess(const std::vector<std::string>& argv) {
    int in_pipe[2], out_pipe[2];
    if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) throw Error(std::string("pipe: ") + std::strerror(errno));
    pid_ = fork();
    if (pid_ < 0) throw Error(std::string("fork: ") + std::strerror(errno));
    if (pid_ == 0) {
      dup2(in_pipe[0], STDIN_FILENO);
      dup2(out_pipe[1], STDOUT_FILENO);
      close(in_pipe[0]);
      close(in_pipe[1]);
      close(out_pipe[0]);
      close(out_pipe[1]);
      std::vector<char*> args;
      for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
      args.push_back(nullptr);
      execvp(args[0], args.data());
      _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    fcntl(to_child_, F_SETFD, FD_CLOEXEC);
    fcntl(from_child_, F_SETFD, FD_CLOEXEC);
  }

  ~ChildProcess() {
    close(to_child_);
    close(from_child_);
    // Give the child a moment to exit on EOF, then make sure.
    for (int i = 0; i < 50; ++i) {
      if (waitpid(pid_, nullptr, WNOHANG) == pid_) return;
      usleep(2000);
    }
    kill(pid_, SIGKILL);
    waitpid(pid_, nullptr, 0);
  }

  std::string exchange(const std::string& line, std::chrono::milliseconds timeout) {
    const std::string msg = line + "\n";
    std::size_t off = 0;
    while (off < msg.size()) {
      ssize_t n = ::write(to_child_, msg.data() + off, msg.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(std::string("write to scorer process: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (auto pos = buffer_.find('\n'); pos != std::string::npos) {
        std::string out = buffer_.substr(0, pos);
        buffer_.erase(0, pos + 1);
        return out;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw Error("scorer process timed out");
      pollfd p{from_child_, POLLIN, 0};
      int r = poll(&p, 1, static_cast<int>(left.count()));
      if (r < 0 && errno == EINTR) continue;
      if (r <= 0) continue;
      char buf[4096];
      ssize_t n = ::read(from_child_, buf, sizeof buf);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw Error("scorer process closed its output");
      buffer_.append(buf, static_cast<std::size_t>(n));
    }
  }

 private:
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

ExternalScorer::ExternalScorer(ExternalConfig config) : config_(std::move(config)) {
  if (config_.transport == ExternalConfig::Transport::kProcess && config_.command.empty())
    throw ValidationError("process transport needs a command");
  if (config_.transport == ExternalConfig::Transport::kHttp && config_.url.empty())
    throw ValidationError("http transport needs a url");
  // A dead child must surface as an error from write(), not kill us.
  signal(SIGPIPE, SIG_IGN);
}

ExternalScorer::~ExternalScorer() = default;

ScoreTriple ExternalScorer::predict(const ScoringItem& item) const {
  const std::string body = scoring_request(item).dump();
  return config_.transport == ExternalConfig::Transport::kProcess ? predict_process(body) : predict_http(body);
}

ScoreTriple ExternalScorer::predict_process(const std::string& line) const {
  std::lock_guard lock(mu_);
  if (!child_) child_ = std::make_unique<ChildProcess>(config_.command);
  try {
    return parse_scoring_response(child_->exchange(line, config_.timeout));
  } catch (const ParseError&) {
    throw;
  } catch (const Error&) {
    child_.reset();  // restart on the next call
    throw;
  }
}

ScoreTriple ExternalScorer::predict_http(const std::string& body) const {
  static const std::regex re(R"(^(http://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.url, m, re)) throw ValidationError("bad scorer url '" + config_.url + "'");
  httplib::Client cli(m[1].str());
  const auto secs = config_.timeout.count() / 1000, usecs = (config_.timeout.count() % 1000) * 1000;
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  const std::string path = m[2].matched ? m[2].str() : "/";
  auto res = cli.Post(path, body, "application/json");
  if (!res) throw Error("scorer request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw Error("scorer returned HTTP " + std::to_string(res->status));
  return parse_scoring_response(res->body);
}

}  // namespace prefedit::scorer
