// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "prefedit/datamodel.hpp"
#include "prefedit/dimension.hpp"
#include "prefedit/subjective.hpp"

namespace prefedit::metrics {

struct DimensionScores {
  double quality = 0.0;
  double alignment = 0.0;
  double preservation = 0.0;

  double operator[](Dimension d) const;
  double& operator[](Dimension d);
};

struct MetricReport {
  double srcc_global = 0.0;
  double plcc_global = 0.0;
  double srcc_group = 0.0;
  double acc = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_groups = 0;
  std::size_t n_skipped_groups = 0;
  std::size_t n_pairs = 0;
};

struct LeaderboardRow {
  std::string model_id;
  DimensionScores scores;
  double overall = 0.0;
  int rank = 0;
  bool tied = false;  // overall equals a neighbour's; order fixed by model_id
};

/// Exponents of the weighted geometric overall score (quality, alignment, preservation).
struct OverallWeights {
  double quality = 0.3;
  double alignment = 0.4;
  double preservation = 0.3;

  /// Throws ValidationError unless all weights are positive and sum to 1.
  void validate() const;
};

/// Average (fractional) ranks, 1-based.
std::vector<double> fractional_ranks(std::span<const double> x);

/// Throw NumericError when either side is constant.
double plcc(std::span<const double> x, std::span<const double> y);
double srcc(std::span<const double> x, std::span<const double> y);

struct GroupSrcc {
  double mean = 0.0;
  std::size_t n_used = 0;
  std::size_t n_skipped = 0;
};

/// Unweighted mean of per-group SRCC, skipping groups with a constant side.
GroupSrcc group_srcc(const std::vector<std::pair<std::vector<double>, std::vector<double>>>& groups);

/// Fraction of pairs whose winner is predicted strictly higher. Throws on an
/// empty list or an unscored member.
double pair_accuracy(const std::map<std::string, double>& predicted,
                     const std::vector<subjective::PreferencePair>& pairs);

/// Members beaten per item; ties count half.
std::map<std::string, double> win_counts(const subjective::AggregatedRanking& agg);

/// Mean win count per model over the groups it appears in, for one dimension.
std::map<std::string, double> model_ranking_scores(
    const std::vector<subjective::AggregatedRanking>& groups, Dimension dimension,
    const std::map<std::string, std::string>& model_of);

double overall_score(const DimensionScores& d, const OverallWeights& w = {});

/// Rows sorted by overall descending, ties broken by model_id.
std::vector<LeaderboardRow> build_leaderboard(const std::map<std::string, DimensionScores>& per_model,
                                              const OverallWeights& w = {});

/// Leaderboard whose dimension scores are the mean win counts of each model.
std::vector<LeaderboardRow> build_leaderboard(const std::vector<subjective::AggregatedRanking>& groups,
                                              const data::Manifest& manifest,
                                              const OverallWeights& w = {});

std::string leaderboard_csv(const std::vector<LeaderboardRow>& rows);

/// (task, model) -> per-dimension mean MOS; only dimensions with samples are present.
struct TaskScores {
  std::map<std::pair<std::string, std::string>, std::map<Dimension, double>> mean;
  std::map<std::pair<std::string, std::string>, std::map<Dimension, std::size_t>> count;
  std::vector<std::string> empty_tasks;  // taxonomy tasks without any scored sample
};

TaskScores task_scores(const std::vector<subjective::MosRecord>& mos, const data::Manifest& manifest);

/// task,model_id,quality,alignment,preservation (blank cell when a dimension has no samples).
std::string task_scores_csv(const TaskScores& ts);

Json to_json(const MetricReport& r);

}  // namespace prefedit::metrics
