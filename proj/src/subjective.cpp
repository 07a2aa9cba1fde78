// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "prefedit/subjective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prefedit/error.hpp"

namespace prefedit::subjective {

double sample_stddev(const std::vector<double>& values) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(n - 1));
}

namespace {

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::vector<bool> detect_outliers(const std::vector<RawRating>& ratings) {
  std::map<std::pair<std::string, Dimension>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < ratings.size(); ++i)
    cells[{ratings[i].edited_id, ratings[i].dimension}].push_back(i);

  std::vector<bool> flags(ratings.size(), false);
  for (const auto& [_, idx] : cells) {
    if (idx.size() < 2) continue;
    std::vector<double> values;
    values.reserve(idx.size());
    for (auto i : idx) values.push_back(ratings[i].value);
    const double mean = mean_of(values);
    const double sd = sample_stddev(values);
    for (auto i : idx)
      if (std::abs(ratings[i].value - mean) > kOutlierSigmas * sd) flags[i] = true;
  }
  return flags;
}

std::set<std::string> remove_unreliable_subjects(const std::vector<RawRating>& ratings,
                                                 const std::vector<bool>& flags) {
  if (flags.size() != ratings.size()) throw ValidationError("outlier flags do not match ratings");
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;  // flagged, total
  for (std::size_t i = 0; i < ratings.size(); ++i) {
    auto& t = tally[ratings[i].annotator_id];
    t.first += flags[i] ? 1 : 0;
    t.second += 1;
  }
  std::set<std::string> kept;
  for (const auto& [id, t] : tally)
    if (static_cast<double>(t.first) / static_cast<double>(t.second) <= kMaxOutlierFraction) kept.insert(id);
  if (!tally.empty() && kept.empty()) throw ValidationError("every annotator was removed as unreliable");
  return kept;
}

ZScores zscore_normalize(const std::vector<RawRating>& ratings) {
  std::map<std::string, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < ratings.size(); ++i) by_subject[ratings[i].annotator_id].push_back(i);

  ZScores out;
  out.z.assign(ratings.size(), 0.0);
  for (const auto& [id, idx] : by_subject) {
    std::vector<double> values;
    values.reserve(idx.size());
    for (auto i : idx) values.push_back(ratings[i].value);
    SubjectStats st{id, mean_of(values), sample_stddev(values), idx.size()};
    if (st.sigma > 0.0) {
      for (auto i : idx) out.z[i] = (ratings[i].value - st.mu) / st.sigma;
    } else {
      out.zero_sigma.push_back(id);
    }
    out.subjects.push_back(std::move(st));
  }
  return out;
}

std::vector<MosRecord> compute_mos(const std::vector<RawRating>& ratings, const std::vector<double>& z) {
  if (z.size() != ratings.size()) throw ValidationError("z values do not match ratings");
  std::map<std::pair<std::string, Dimension>, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < ratings.size(); ++i) {
    auto& a = acc[{ratings[i].edited_id, ratings[i].dimension}];
    a.first += z[i];
    a.second += 1;
  }
  std::vector<MosRecord> out;
  out.reserve(acc.size());
  for (const auto& [key, a] : acc) {
    MosRecord r;
    r.edited_id = key.first;
    r.dimension = key.second;
    r.n_subjects = a.second;
    r.z_mean = a.first / static_cast<double>(a.second);
    r.score = mos_from_z(r.z_mean);
    out.push_back(std::move(r));
  }
  return out;
}

ScoreResult process_scores(const std::vector<RawRating>& ratings) {
  for (const auto& r : ratings)
    if (!(r.value >= 1.0 && r.value <= 5.0))
      throw ValidationError("rating " + std::to_string(r.value) + " outside [1, 5] (" + r.annotator_id + ", " +
                            r.edited_id + ")");

  ScoreResult res;
  res.report.n_ratings = ratings.size();
  res.outlier_flags = detect_outliers(ratings);
  res.report.n_outliers = static_cast<std::size_t>(std::count(res.outlier_flags.begin(), res.outlier_flags.end(), true));
  res.surviving_subjects = remove_unreliable_subjects(ratings, res.outlier_flags);

  std::set<std::string> everyone;
  for (const auto& r : ratings) everyone.insert(r.annotator_id);
  for (const auto& id : everyone)
    if (!res.surviving_subjects.count(id)) res.report.removed_subjects.push_back(id);

  std::vector<RawRating> kept;
  for (std::size_t i = 0; i < ratings.size(); ++i)
    if (!res.outlier_flags[i] && res.surviving_subjects.count(ratings[i].annotator_id)) kept.push_back(ratings[i]);

  ZScores z = zscore_normalize(kept);
  res.report.zero_sigma_warnings = z.zero_sigma;
  res.mos = compute_mos(kept, z.z);

  std::set<std::pair<std::string, Dimension>> all_cells, scored;
  for (const auto& r : ratings) all_cells.insert({r.edited_id, r.dimension});
  for (const auto& m : res.mos) scored.insert({m.edited_id, m.dimension});
  for (const auto& c : all_cells)
    if (!scored.count(c)) res.report.omitted.push_back(c);
  res.report.n_mos = res.mos.size();
  return res;
}

namespace {

/// Validates that every ranking is a permutation of the same member set and
/// returns the sorted members.
std::vector<std::string> common_members(const std::vector<RawRanking>& rankings) {
  if (rankings.empty()) throw ValidationError("no rankings to aggregate");
  std::vector<std::string> members = rankings.front().order;
  std::sort(members.begin(), members.end());
  if (std::adjacent_find(members.begin(), members.end()) != members.end())
    throw ValidationError("ranking of group '" + rankings.front().group_id + "' repeats an item");
  for (const auto& r : rankings) {
    if (r.group_id != rankings.front().group_id || r.dimension != rankings.front().dimension)
      throw ValidationError("rankings mix groups or dimensions");
    std::vector<std::string> m = r.order;
    std::sort(m.begin(), m.end());
    if (m != members)
      throw ValidationError("inconsistent membership in group '" + r.group_id + "' (annotator " + r.annotator_id + ")");
  }
  return members;
}

std::map<std::string, long> rank_sums(const std::vector<RawRanking>& rankings) {
  std::map<std::string, long> sums;
  for (const auto& r : rankings)
    for (std::size_t p = 0; p < r.order.size(); ++p) sums[r.order[p]] += static_cast<long>(p + 1);
  return sums;
}

}  // namespace

double concordance(const std::vector<RawRanking>& rankings) {
  const auto members = common_members(rankings);
  const double m = static_cast<double>(members.size());
  const double k = static_cast<double>(rankings.size());
  if (members.size() < 2) throw ValidationError("concordance needs at least two items");
  if (rankings.size() < 2) throw ValidationError("concordance needs at least two rankings");
  const auto sums = rank_sums(rankings);
  const double mean_sum = k * (m + 1.0) / 2.0;
  double s = 0.0;
  for (const auto& [_, r] : sums) s += (static_cast<double>(r) - mean_sum) * (static_cast<double>(r) - mean_sum);
  return 12.0 * s / (k * k * (m * m * m - m));
}

AggregatedRanking aggregate_rankings(const std::vector<RawRanking>& rankings) {
  const auto members = common_members(rankings);
  AggregatedRanking agg;
  agg.group_id = rankings.front().group_id;
  agg.dimension = rankings.front().dimension;
  agg.n_annotators = rankings.size();
  agg.rank_sum = rank_sums(rankings);
  for (const auto& [id, s] : agg.rank_sum)
    agg.avg_rank[id] = static_cast<double>(s) / static_cast<double>(agg.n_annotators);
  agg.concordance = (members.size() >= 2 && rankings.size() >= 2) ? concordance(rankings) : 1.0;
  return agg;
}

bool flag_for_reannotation(const AggregatedRanking& agg, double threshold) { return agg.concordance < threshold; }

PairsResult rankings_to_pairs(const AggregatedRanking& agg) {
  PairsResult out;
  std::vector<std::pair<std::string, long>> items(agg.rank_sum.begin(), agg.rank_sum.end());
  const double k = static_cast<double>(agg.n_annotators);
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::size_t j = i + 1; j < items.size(); ++j) {
      const auto& a = items[i];
      const auto& b = items[j];
      if (a.second == b.second) {
        ++out.skipped_ties;
        continue;
      }
      const bool a_wins = a.second < b.second;
      PreferencePair p;
      p.group_id = agg.group_id;
      p.dimension = agg.dimension;
      p.winner = a_wins ? a.first : b.first;
      p.loser = a_wins ? b.first : a.first;
      p.rank_gap = static_cast<double>(std::abs(a.second - b.second)) / k;
      out.pairs.push_back(std::move(p));
    }
  }
  return out;
}

ScoreIndex index_scores(const std::vector<MosRecord>& mos) {
  ScoreIndex idx;
  for (const auto& m : mos) idx[{m.edited_id, m.dimension}] = m.score;
  return idx;
}

std::vector<PreferencePair> check_pair_score_consistency(const std::vector<PreferencePair>& pairs,
                                                         const ScoreIndex& scores) {
  std::vector<PreferencePair> rejected;
  for (const auto& p : pairs) {
    auto w = scores.find({p.winner, p.dimension});
    auto l = scores.find({p.loser, p.dimension});
    if (w == scores.end() || l == scores.end()) continue;
    if (w->second < l->second) rejected.push_back(p);
  }
  return rejected;
}

RankingResult process_rankings(const std::vector<RawRanking>& rankings, double concordance_threshold) {
  std::map<std::pair<std::string, Dimension>, std::vector<RawRanking>> groups;
  for (const auto& r : rankings) groups[{r.group_id, r.dimension}].push_back(r);

  RankingResult res;
  for (const auto& [key, rs] : groups) {
    AggregatedRanking agg = aggregate_rankings(rs);
    if (flag_for_reannotation(agg, concordance_threshold)) res.report.flagged_for_reannotation.push_back(key);
    PairsResult pr = rankings_to_pairs(agg);
    res.report.skipped_ties += pr.skipped_ties;
    for (auto& p : pr.pairs) res.pairs.push_back(std::move(p));
    res.aggregated.push_back(std::move(agg));
  }
  res.report.n_groups = res.aggregated.size();
  res.report.n_pairs = res.pairs.size();
  return res;
}

// --- serialization ---------------------------------------------------------

Json to_json(const RawRating& r) {
  return {{"annotator_id", r.annotator_id},
          {"edited_id", r.edited_id},
          {"dimension", to_string(r.dimension)},
          {"value", r.value}};
}

Json to_json(const RawRanking& r) {
  return {{"annotator_id", r.annotator_id},
          {"group_id", r.group_id},
          {"dimension", to_string(r.dimension)},
          {"order", r.order}};
}

Json to_json(const MosRecord& r) {
  return {{"edited_id", r.edited_id},
          {"dimension", to_string(r.dimension)},
          {"z_mean", r.z_mean},
          {"n_subjects", r.n_subjects},
          {"score", r.score}};
}

Json to_json(const AggregatedRanking& r) {
  return {{"group_id", r.group_id},
          {"dimension", to_string(r.dimension)},
          {"avg_rank", r.avg_rank},
          {"rank_sum", r.rank_sum},
          {"n_annotators", r.n_annotators},
          {"concordance", r.concordance}};
}

Json to_json(const PreferencePair& p) {
  return {{"group_id", p.group_id},
          {"dimension", to_string(p.dimension)},
          {"winner", p.winner},
          {"loser", p.loser},
          {"rank_gap", p.rank_gap}};
}

Json to_json(const ScoreReport& r) {
  Json omitted = Json::array();
  for (const auto& [id, d] : r.omitted) omitted.push_back({{"edited_id", id}, {"dimension", to_string(d)}});
  return {{"n_ratings", r.n_ratings},
          {"n_outliers", r.n_outliers},
          {"removed_subjects", r.removed_subjects},
          {"zero_sigma_warnings", r.zero_sigma_warnings},
          {"omitted", omitted},
          {"n_mos", r.n_mos}};
}

Json to_json(const RankingReport& r) {
  Json flagged = Json::array();
  for (const auto& [g, d] : r.flagged_for_reannotation)
    flagged.push_back({{"group_id", g}, {"dimension", to_string(d)}});
  return {{"n_groups", r.n_groups},
          {"n_pairs", r.n_pairs},
          {"skipped_ties", r.skipped_ties},
          {"flagged_for_reannotation", flagged}};
}

namespace {

Dimension dim_field(const Json& j, std::size_t line) {
  try {
    return dimension_from_string(get_string(j, "dimension", line));
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(e.what(), line);
  }
}

std::vector<std::string> string_array(const Json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_array()) throw ParseError(std::string("missing array field '") + key + "'", line);
  std::vector<std::string> out;
  for (const auto& x : *it) {
    if (!x.is_string()) throw ParseError(std::string("non-string entry in '") + key + "'", line);
    out.push_back(x.get<std::string>());
  }
  return out;
}

}  // namespace

RawRating rating_from_json(const Json& j, std::size_t line) {
  RawRating r;
  r.annotator_id = get_string(j, "annotator_id", line);
  r.edited_id = get_string(j, "edited_id", line);
  r.dimension = dim_field(j, line);
  r.value = get_number(j, "value", line);
  if (!(r.value >= 1.0 && r.value <= 5.0)) throw ParseError("rating value outside [1, 5]", line);
  return r;
}

RawRanking ranking_from_json(const Json& j, std::size_t line) {
  RawRanking r;
  r.annotator_id = get_string(j, "annotator_id", line);
  r.group_id = get_string(j, "group_id", line);
  r.dimension = dim_field(j, line);
  r.order = string_array(j, "order", line);
  return r;
}

MosRecord mos_from_json(const Json& j, std::size_t line) {
  MosRecord r;
  r.edited_id = get_string(j, "edited_id", line);
  r.dimension = dim_field(j, line);
  r.z_mean = get_number(j, "z_mean", line);
  r.n_subjects = static_cast<std::size_t>(get_number(j, "n_subjects", line));
  r.score = get_number(j, "score", line);
  return r;
}

AggregatedRanking aggregated_from_json(const Json& j, std::size_t line) {
  AggregatedRanking r;
  r.group_id = get_string(j, "group_id", line);
  r.dimension = dim_field(j, line);
  r.n_annotators = static_cast<std::size_t>(get_number(j, "n_annotators", line));
  r.concordance = get_number(j, "concordance", line);
  if (!j.contains("rank_sum") || !j["rank_sum"].is_object()) throw ParseError("missing 'rank_sum'", line);
  for (const auto& [id, v] : j["rank_sum"].items()) {
    r.rank_sum[id] = v.get<long>();
    r.avg_rank[id] = static_cast<double>(r.rank_sum[id]) / static_cast<double>(r.n_annotators);
  }
  return r;
}

PreferencePair pair_from_json(const Json& j, std::size_t line) {
  PreferencePair p;
  p.group_id = get_string(j, "group_id", line);
  p.dimension = dim_field(j, line);
  p.winner = get_string(j, "winner", line);
  p.loser = get_string(j, "loser", line);
  p.rank_gap = get_number(j, "rank_gap", line);
  return p;
}

namespace {

template <typename T, typename F>
std::vector<T> load_with(const std::filesystem::path& path, F&& parse) {
  std::vector<T> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t line) { out.push_back(parse(j, line)); });
  return out;
}

}  // namespace

std::vector<RawRating> load_ratings(const std::filesystem::path& path) {
  return load_with<RawRating>(path, rating_from_json);
}
std::vector<RawRanking> load_rankings(const std::filesystem::path& path) {
  return load_with<RawRanking>(path, ranking_from_json);
}
std::vector<MosRecord> load_mos(const std::filesystem::path& path) { return load_with<MosRecord>(path, mos_from_json); }
std::vector<AggregatedRanking> load_aggregated(const std::filesystem::path& path) {
  return load_with<AggregatedRanking>(path, aggregated_from_json);
}
std::vector<PreferencePair> load_pairs(const std::filesystem::path& path) {
  return load_with<PreferencePair>(path, pair_from_json);
}

}  // namespace prefedit::subjective
