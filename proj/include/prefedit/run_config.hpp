// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "prefedit/datamodel.hpp"
#include "prefedit/jsonl.hpp"
#include "prefedit/metrics.hpp"
#include "prefedit/rewarddpo.hpp"
#include "prefedit/scorer.hpp"

namespace prefedit {

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  // Fixed by the protocol; echoed for completeness, rejected if changed.
  double outlier_sigmas = 2.0;
  double subject_removal_fraction = 0.05;

  double concordance_threshold = 0.6;
  double gold_threshold = 0.8;
  double low_quality_threshold = 60.0;

  data::SplitRatios split_ratios{5.0, 1.0, 1.0};
  metrics::OverallWeights weights;

  std::vector<std::size_t> scorer_hidden{16};
  scorer::TrainConfig scorer_train;

  std::size_t dpo_dim = 8;
  std::vector<std::size_t> dpo_hidden{32};
  dpo::DpoConfig dpo;

  /// Training configs with the run-level seed and thread count filled in.
  scorer::TrainConfig scorer_config() const;
  dpo::DpoConfig dpo_config() const;
  dpo::PairConfig pair_config() const { return {low_quality_threshold, weights}; }

  void validate() const;
  /// Overlays keys present in `j`; unknown keys are a ValidationError.
  void merge(const Json& j);
  Json to_json() const;
  static RunConfig load(const std::filesystem::path& path);
};

/// Schema-versioned record written next to every command's outputs.
class RunReport {
 public:
  static constexpr int kSchemaVersion = 1;

  RunReport(std::string subcommand, const RunConfig& config);

  void add_input(const std::string& name, const std::filesystem::path& path);
  void add_output(const std::string& name, const std::filesystem::path& path);
  Json& counts() { return counts_; }
  Json& extra() { return extra_; }

  Json to_json() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::string subcommand_;
  Json config_;
  Json inputs_ = Json::object();
  Json outputs_ = Json::object();
  Json counts_ = Json::object();
  Json extra_ = Json::object();
};

}  // namespace prefedit
