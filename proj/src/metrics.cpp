// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "prefedit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "prefedit/error.hpp"

namespace prefedit::metrics {

double DimensionScores::operator[](Dimension d) const {
  switch (d) {
    case Dimension::kQuality: return quality;
    case Dimension::kAlignment: return alignment;
    case Dimension::kPreservation: return preservation;
  }
  return 0.0;
}

double& DimensionScores::operator[](Dimension d) {
  switch (d) {
    case Dimension::kQuality: return quality;
    case Dimension::kAlignment: return alignment;
    default: return preservation;
  }
}

void OverallWeights::validate() const {
  if (!(quality > 0.0 && alignment > 0.0 && preservation > 0.0))
    throw ValidationError("overall-score weights must be positive");
  if (std::abs(quality + alignment + preservation - 1.0) > 1e-9)
    throw ValidationError("overall-score weights must sum to 1");
}

std::vector<double> fractional_ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double plcc(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("correlation inputs differ in length");
  const std::size_t n = x.size();
  if (n < 2) throw ValidationError("correlation needs at least two samples");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericError("correlation undefined for a constant vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double srcc(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("correlation inputs differ in length");
  const auto rx = fractional_ranks(x);
  const auto ry = fractional_ranks(y);
  return plcc(rx, ry);
}

GroupSrcc group_srcc(const std::vector<std::pair<std::vector<double>, std::vector<double>>>& groups) {
  GroupSrcc out;
  double sum = 0.0;
  for (const auto& [pred, human] : groups) {
    if (pred.size() != human.size()) throw ValidationError("group vectors differ in length");
    if (pred.size() < 2) throw ValidationError("group with fewer than two members");
    try {
      sum += srcc(pred, human);
      ++out.n_used;
    } catch (const NumericError&) {
      ++out.n_skipped;
    }
  }
  if (out.n_used == 0) throw NumericError("no group has a defined SRCC");
  out.mean = sum / static_cast<double>(out.n_used);
  return out;
}

double pair_accuracy(const std::map<std::string, double>& predicted,
                     const std::vector<subjective::PreferencePair>& pairs) {
  if (pairs.empty()) throw ValidationError("pair accuracy over an empty pair list");
  std::size_t correct = 0;
  for (const auto& p : pairs) {
    auto w = predicted.find(p.winner);
    auto l = predicted.find(p.loser);
    if (w == predicted.end() || l == predicted.end())
      throw ValidationError("pair member without a prediction: " + (w == predicted.end() ? p.winner : p.loser));
    if (w->second > l->second) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

std::map<std::string, double> win_counts(const subjective::AggregatedRanking& agg) {
  std::map<std::string, double> wins;
  // Shared denominator, so avg_rank orders exactly like the integer sums.
  for (const auto& [a, ra] : agg.avg_rank) {
    double w = 0.0;
    for (const auto& [b, rb] : agg.avg_rank) {
      if (a == b) continue;
      if (ra < rb) w += 1.0;
      else if (ra == rb) w += 0.5;
    }
    wins[a] = w;
  }
  return wins;
}

std::map<std::string, double> model_ranking_scores(const std::vector<subjective::AggregatedRanking>& groups,
                                                   Dimension dimension,
                                                   const std::map<std::string, std::string>& model_of) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& g : groups) {
    if (g.dimension != dimension) continue;
    std::set<std::string> seen;
    for (const auto& [id, w] : win_counts(g)) {
      auto it = model_of.find(id);
      if (it == model_of.end()) throw IntegrityError("edited item '" + id + "' has no model");
      if (!seen.insert(it->second).second)
        throw IntegrityError("model '" + it->second + "' appears twice in group '" + g.group_id + "'");
      auto& a = acc[it->second];
      a.first += w;
      a.second += 1;
    }
  }
  std::map<std::string, double> out;
  for (const auto& [model, a] : acc) out[model] = a.first / static_cast<double>(a.second);
  return out;
}

double overall_score(const DimensionScores& d, const OverallWeights& w) {
  w.validate();
  if (!(d.quality > 0.0 && d.alignment > 0.0 && d.preservation > 0.0))
    throw ValidationError("overall score needs strictly positive dimension scores");
  return std::pow(d.quality, w.quality) * std::pow(d.alignment, w.alignment) *
         std::pow(d.preservation, w.preservation);
}

std::vector<LeaderboardRow> build_leaderboard(const std::map<std::string, DimensionScores>& per_model,
                                              const OverallWeights& w) {
  std::vector<LeaderboardRow> rows;
  for (const auto& [model, s] : per_model) rows.push_back({model, s, overall_score(s, w), 0, false});
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    if (a.overall != b.overall) return a.overall > b.overall;
    return a.model_id < b.model_id;
  });
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].rank = static_cast<int>(i + 1);
    if ((i > 0 && rows[i - 1].overall == rows[i].overall) ||
        (i + 1 < rows.size() && rows[i + 1].overall == rows[i].overall))
      rows[i].tied = true;
  }
  return rows;
}

std::vector<LeaderboardRow> build_leaderboard(const std::vector<subjective::AggregatedRanking>& groups,
                                              const data::Manifest& manifest, const OverallWeights& w) {
  std::map<std::string, std::string> model_of;
  for (const auto& e : manifest.editions) model_of[e.edited_id] = e.model_id;
  std::map<std::string, DimensionScores> per_model;
  std::map<std::string, int> present;
  for (Dimension d : kAllDimensions) {
    for (const auto& [model, s] : model_ranking_scores(groups, d, model_of)) {
      per_model[model][d] = s;
      present[model] |= 1 << index_of(d);
    }
  }
  for (const auto& model : manifest.model_ids()) {
    auto it = present.find(model);
    if (it == present.end()) throw ValidationError("model '" + model + "' is present in zero ranked groups");
    if (it->second != 7) throw ValidationError("model '" + model + "' lacks rankings on some dimension");
  }
  return build_leaderboard(per_model, w);
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string leaderboard_csv(const std::vector<LeaderboardRow>& rows) {
  std::string out = "model_id,quality,alignment,preservation,overall,rank\n";
  for (const auto& r : rows) {
    out += r.model_id + "," + fmt_double(r.scores.quality) + "," + fmt_double(r.scores.alignment) + "," +
           fmt_double(r.scores.preservation) + "," + fmt_double(r.overall) + "," + std::to_string(r.rank) + "\n";
  }
  return out;
}

TaskScores task_scores(const std::vector<subjective::MosRecord>& mos, const data::Manifest& manifest) {
  TaskScores ts;
  std::map<std::pair<std::string, std::string>, std::map<Dimension, double>> sums;
  std::set<std::string> scored_tasks;
  for (const auto& m : mos) {
    const data::EditedItem* e = manifest.find_edition(m.edited_id);
    if (!e) throw IntegrityError("MOS for unknown edited_id '" + m.edited_id + "'");
    const std::string& task = manifest.task_of(m.edited_id);
    auto key = std::make_pair(task, e->model_id);
    sums[key][m.dimension] += m.score;
    ts.count[key][m.dimension] += 1;
    scored_tasks.insert(task);
  }
  for (const auto& [key, per_dim] : sums)
    for (const auto& [d, s] : per_dim) ts.mean[key][d] = s / static_cast<double>(ts.count[key][d]);
  for (const auto& t : manifest.taxonomy)
    if (!scored_tasks.count(t.name)) ts.empty_tasks.push_back(t.name);
  return ts;
}

std::string task_scores_csv(const TaskScores& ts) {
  std::string out = "task,model_id,quality,alignment,preservation\n";
  for (const auto& [key, per_dim] : ts.mean) {
    out += key.first + "," + key.second;
    for (Dimension d : kAllDimensions) {
      out += ",";
      if (auto it = per_dim.find(d); it != per_dim.end()) out += fmt_double(it->second);
    }
    out += "\n";
  }
  return out;
}

Json to_json(const MetricReport& r) {
  return {{"srcc_global", r.srcc_global}, {"plcc_global", r.plcc_global}, {"srcc_group", r.srcc_group},
          {"acc", r.acc},                 {"n_samples", r.n_samples},     {"n_groups", r.n_groups},
          {"n_skipped_groups", r.n_skipped_groups}, {"n_pairs", r.n_pairs}};
}

}  // namespace prefedit::metrics
