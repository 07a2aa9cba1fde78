// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "prefedit/scorer.hpp"

namespace prefedit::scorer {

/// Adapter for a scoring model that lives outside this process.
///
/// Request:  {"edited_id", "source_ref", "edited_ref", "prompt", "dimensions"}
/// Response: {"s_v", "s_e", "s_p"}
///
/// The "process" transport keeps one child alive and exchanges one JSON
/// object per line over its stdin/stdout. The "http" transport POSTs the
/// request body to a URL.
struct ExternalConfig {
  enum class Transport { kProcess, kHttp };
  Transport transport = Transport::kProcess;
  std::vector<std::string> command;  // argv for kProcess
  std::string url;                   // http://host:port/path for kHttp
  std::chrono::milliseconds timeout{10000};
};

ExternalConfig external_config_from_json(const Json& j);

Json scoring_request(const ScoringItem& item);
/// Throws Error on a missing or non-numeric field.
ScoreTriple parse_scoring_response(const std::string& body);

class ExternalScorer : public Scorer {
 public:
  explicit ExternalScorer(ExternalConfig config);
  ~ExternalScorer() override;
  ExternalScorer(const ExternalScorer&) = delete;
  ExternalScorer& operator=(const ExternalScorer&) = delete;

  ScoreTriple predict(const ScoringItem& item) const override;
  std::string kind() const override { return "external"; }

 private:
  class ChildProcess;

  ScoreTriple predict_process(const std::string& line) const;
  ScoreTriple predict_http(const std::string& body) const;

  ExternalConfig config_;
  mutable std::mutex mu_;
  mutable std::unique_ptr<ChildProcess> child_;
};

}  // namespace prefedit::scorer
