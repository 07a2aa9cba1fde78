// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Turns raw human annotations into MOS records, aggregated rankings and
// preference pairs.
//
// Scores:   ratings -> outlier flags -> subject screening -> per-subject z-scores
//           -> per-image mean z -> 100 (z + 3) / 6
// Rankings: per-annotator orders -> average rank + Kendall's W -> C(M,2) pairs

#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "prefedit/dimension.hpp"
#include "prefedit/jsonl.hpp"

namespace prefedit::subjective {

struct RawRating {
  std::string annotator_id;
  std::string edited_id;
  Dimension dimension = Dimension::kQuality;
  double value = 0.0;  // continuous, [1, 5]
};

struct SubjectStats {
  std::string annotator_id;
  double mu = 0.0;
  double sigma = 0.0;
  std::size_t n_ratings = 0;
};

struct MosRecord {
  std::string edited_id;
  Dimension dimension = Dimension::kQuality;
  double z_mean = 0.0;
  std::size_t n_subjects = 0;
  double score = 0.0;  // not clamped to [0, 100]
};

struct RawRanking {
  std::string annotator_id;
  std::string group_id;
  Dimension dimension = Dimension::kQuality;
  std::vector<std::string> order;  // best first
};

struct AggregatedRanking {
  std::string group_id;
  Dimension dimension = Dimension::kQuality;
  std::map<std::string, double> avg_rank;
  /// Exact integer rank sums; avg_rank = rank_sum / n_annotators.
  std::map<std::string, long> rank_sum;
  std::size_t n_annotators = 0;
  double concordance = 1.0;
};

struct PreferencePair {
  std::string group_id;
  Dimension dimension = Dimension::kQuality;
  std::string winner;
  std::string loser;
  double rank_gap = 0.0;

  bool operator==(const PreferencePair&) const = default;
};

inline constexpr double kOutlierSigmas = 2.0;
inline constexpr double kMaxOutlierFraction = 0.05;
inline constexpr double kDefaultConcordanceThreshold = 0.6;

/// Sample standard deviation (n - 1). Zero for fewer than two values.
double sample_stddev(const std::vector<double>& values);

/// Indices of ratings farther than 2 sample standard deviations from the mean
/// of their (edited_id, dimension) cell. Cells with < 2 ratings never flag.
std::vector<bool> detect_outliers(const std::vector<RawRating>& ratings);

/// Annotators whose flagged fraction is at most 5 %. Throws ValidationError
/// when nobody survives.
std::set<std::string> remove_unreliable_subjects(const std::vector<RawRating>& ratings,
                                                 const std::vector<bool>& flags);

struct ZScores {
  std::vector<double> z;  // parallel to the input ratings
  std::vector<SubjectStats> subjects;
  std::vector<std::string> zero_sigma;  // annotators whose z were forced to 0
};

/// z = (s - mu_i) / sigma_i with per-annotator statistics pooled across dimensions.
ZScores zscore_normalize(const std::vector<RawRating>& ratings);

/// Groups by (edited_id, dimension); output sorted by edited_id then dimension.
std::vector<MosRecord> compute_mos(const std::vector<RawRating>& ratings,
                                   const std::vector<double>& z);

inline double mos_from_z(double z_mean) { return 100.0 * (z_mean + 3.0) / 6.0; }

struct ScoreReport {
  std::size_t n_ratings = 0;
  std::size_t n_outliers = 0;
  std::vector<std::string> removed_subjects;
  std::vector<std::string> zero_sigma_warnings;
  /// (edited_id, dimension) cells that lost every rating.
  std::vector<std::pair<std::string, Dimension>> omitted;
  std::size_t n_mos = 0;
};

struct ScoreResult {
  std::vector<bool> outlier_flags;
  std::set<std::string> surviving_subjects;
  std::vector<MosRecord> mos;
  ScoreReport report;
};

/// Full scoring pipeline: outliers, subject screening, z-scores, MOS.
ScoreResult process_scores(const std::vector<RawRating>& ratings);

/// Kendall's W for complete rankings of one group. Throws ValidationError for
/// fewer than two items or two rankings.
double concordance(const std::vector<RawRanking>& rankings);

/// Average 1-based position per item. All rankings must cover the same set.
AggregatedRanking aggregate_rankings(const std::vector<RawRanking>& rankings);

bool flag_for_reannotation(const AggregatedRanking& agg,
                           double threshold = kDefaultConcordanceThreshold);

struct PairsResult {
  std::vector<PreferencePair> pairs;
  std::size_t skipped_ties = 0;
};

/// One pair per unordered member pair with distinct average rank.
PairsResult rankings_to_pairs(const AggregatedRanking& agg);

using ScoreIndex = std::map<std::pair<std::string, Dimension>, double>;
ScoreIndex index_scores(const std::vector<MosRecord>& mos);

/// Pairs whose winner scored strictly below the loser on the pair's dimension.
std::vector<PreferencePair> check_pair_score_consistency(
    const std::vector<PreferencePair>& pairs, const ScoreIndex& scores);

struct RankingReport {
  std::size_t n_groups = 0;
  std::size_t n_pairs = 0;
  std::size_t skipped_ties = 0;
  std::vector<std::pair<std::string, Dimension>> flagged_for_reannotation;
};

struct RankingResult {
  std::vector<AggregatedRanking> aggregated;  // sorted by (group_id, dimension)
  std::vector<PreferencePair> pairs;
  RankingReport report;
};

/// Groups rankings by (group_id, dimension), aggregates, and emits pairs.
RankingResult process_rankings(const std::vector<RawRanking>& rankings,
                               double concordance_threshold = kDefaultConcordanceThreshold);

// File formats.
std::vector<RawRating> load_ratings(const std::filesystem::path& path);
std::vector<RawRanking> load_rankings(const std::filesystem::path& path);
std::vector<MosRecord> load_mos(const std::filesystem::path& path);
std::vector<AggregatedRanking> load_aggregated(const std::filesystem::path& path);
std::vector<PreferencePair> load_pairs(const std::filesystem::path& path);

Json to_json(const RawRating& r);
Json to_json(const RawRanking& r);
Json to_json(const MosRecord& r);
Json to_json(const AggregatedRanking& r);
Json to_json(const PreferencePair& p);
Json to_json(const ScoreReport& r);
Json to_json(const RankingReport& r);

RawRating rating_from_json(const Json& j, std::size_t line = 0);
RawRanking ranking_from_json(const Json& j, std::size_t line = 0);
MosRecord mos_from_json(const Json& j, std::size_t line = 0);
AggregatedRanking aggregated_from_json(const Json& j, std::size_t line = 0);
PreferencePair pair_from_json(const Json& j, std::size_t line = 0);

template <typename T>
std::vector<Json> to_json_lines(const std::vector<T>& items) {
  std::vector<Json> out;
  out.reserve(items.size());
  for (const auto& x : items) out.push_back(to_json(x));
  return out;
}

}  // namespace prefedit::subjective
