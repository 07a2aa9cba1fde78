// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "prefedit/metrics.hpp"
#include "prefedit/rewarddpo.hpp"
#include "prefedit/scorer.hpp"
#include "prefedit/subjective.hpp"

namespace py = pybind11;
using namespace prefedit;

namespace {

using RatingTuple = std::tuple<std::string, std::string, std::string, double>;
using RankingTuple = std::tuple<std::string, std::string, std::string, std::vector<std::string>>;

py::dict process_scores_py(const std::vector<RatingTuple>& rows) {
  std::vector<subjective::RawRating> ratings;
  for (const auto& [annotator, edited, dim, value] : rows)
    ratings.push_back({annotator, edited, dimension_from_string(dim), value});
  const auto res = subjective::process_scores(ratings);
  py::list mos;
  for (const auto& m : res.mos) {
    py::dict d;
    d["edited_id"] = m.edited_id;
    d["dimension"] = std::string(to_string(m.dimension));
    d["z_mean"] = m.z_mean;
    d["n_subjects"] = m.n_subjects;
    d["score"] = m.score;
    mos.append(d);
  }
  py::dict out;
  out["mos"] = mos;
  out["outliers"] = res.outlier_flags;
  out["removed_subjects"] = res.report.removed_subjects;
  out["surviving_subjects"] = std::vector<std::string>(res.surviving_subjects.begin(), res.surviving_subjects.end());
  return out;
}

py::dict process_rankings_py(const std::vector<RankingTuple>& rows, double threshold) {
  std::vector<subjective::RawRanking> rankings;
  for (const auto& [annotator, group, dim, order] : rows)
    rankings.push_back({annotator, group, dimension_from_string(dim), order});
  const auto res = subjective::process_rankings(rankings, threshold);
  py::list agg, pairs;
  for (const auto& a : res.aggregated) {
    py::dict d;
    d["group_id"] = a.group_id;
    d["dimension"] = std::string(to_string(a.dimension));
    d["avg_rank"] = a.avg_rank;
    d["concordance"] = a.concordance;
    agg.append(d);
  }
  for (const auto& p : res.pairs)
    pairs.append(py::make_tuple(p.group_id, std::string(to_string(p.dimension)), p.winner, p.loser, p.rank_gap));
  py::dict out;
  out["aggregated"] = agg;
  out["pairs"] = pairs;
  out["skipped_ties"] = res.report.skipped_ties;
  return out;
}

std::vector<std::tuple<std::string, double, int>> leaderboard_py(
    const std::map<std::string, std::tuple<double, double, double>>& per_model) {
  std::map<std::string, metrics::DimensionScores> in;
  for (const auto& [m, s] : per_model) in[m] = {std::get<0>(s), std::get<1>(s), std::get<2>(s)};
  std::vector<std::tuple<std::string, double, int>> out;
  for (const auto& r : metrics::build_leaderboard(in)) out.emplace_back(r.model_id, r.overall, r.rank);
  return out;
}

}  // namespace

PYBIND11_MODULE(_prefedit, m) {
  m.doc() = "Core numerics of the prefedit toolkit";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("srcc", [](const std::vector<double>& x, const std::vector<double>& y) { return metrics::srcc(x, y); },
        py::arg("x"), py::arg("y"));
  m.def("plcc", [](const std::vector<double>& x, const std::vector<double>& y) { return metrics::plcc(x, y); },
        py::arg("x"), py::arg("y"));
  m.def("fractional_ranks", [](const std::vector<double>& x) { return metrics::fractional_ranks(x); });
  m.def(
      "overall_score",
      [](double q, double a, double p, double wq, double wa, double wp) {
        return metrics::overall_score({q, a, p}, {wq, wa, wp});
      },
      py::arg("quality"), py::arg("alignment"), py::arg("preservation"), py::arg("w_quality") = 0.3,
      py::arg("w_alignment") = 0.4, py::arg("w_preservation") = 0.3);
  m.def("leaderboard", &leaderboard_py, py::arg("per_model"),
        "rows of (model_id, overall, rank) from {model: (quality, alignment, preservation)}");

  m.def("process_scores", &process_scores_py, py::arg("ratings"),
        "ratings: [(annotator_id, edited_id, dimension, value)]");
  m.def("process_rankings", &process_rankings_py, py::arg("rankings"),
        py::arg("concordance_threshold") = subjective::kDefaultConcordanceThreshold,
        "rankings: [(annotator_id, group_id, dimension, order)]");
  m.def("mos_from_z", &subjective::mos_from_z);

  m.def(
      "level_of",
      [](double s, double lo, double hi) { return scorer::ordinal(scorer::level_of(s, {lo, hi})); },
      py::arg("score"), py::arg("min_score") = 0.0, py::arg("max_score") = 100.0);
  m.def(
      "pairwise_loss", [](double s_pos, double s_neg) { return scorer::pairwise_from_scores(s_pos, s_neg); },
      py::arg("s_pos"), py::arg("s_neg"));

  m.def(
      "sample_xt",
      [](const std::vector<double>& x0, const std::vector<double>& eps, double t) {
        return dpo::sample_xt(x0, eps, t);
      },
      py::arg("x0"), py::arg("eps"), py::arg("t"));
}
