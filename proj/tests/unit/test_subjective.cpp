// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "prefedit/error.hpp"
#include "prefedit/subjective.hpp"

namespace prefedit::subjective {
namespace {

constexpr Dimension Q = Dimension::kQuality;
constexpr Dimension A = Dimension::kAlignment;

std::vector<RawRating> cell(const std::string& img, Dimension d, const std::vector<double>& values) {
  std::vector<RawRating> out;
  for (std::size_t i = 0; i < values.size(); ++i) out.push_back({"a" + std::to_string(i), img, d, values[i]});
  return out;
}

TEST(Outliers, UsesSampleDeviation) {
  // mean 3, sample sd 1.265: nothing lies beyond 2.53
  EXPECT_EQ(detect_outliers(cell("x", Q, {1, 3, 3, 3, 3, 5})), std::vector<bool>(6, false));
  const auto flags = detect_outliers(cell("x", Q, {3, 3, 3, 3, 3, 5}));
  EXPECT_EQ(flags, (std::vector<bool>{false, false, false, false, false, true}));
}

TEST(Outliers, SingletonAndConstantCellsNeverFlag) {
  EXPECT_EQ(detect_outliers(cell("x", Q, {4})), std::vector<bool>{false});
  EXPECT_EQ(detect_outliers(cell("x", Q, {2, 2, 2})), std::vector<bool>(3, false));
}

TEST(SubjectScreening, RemovesAboveFivePercent) {
  std::vector<RawRating> r;
  std::vector<bool> flags;
  for (int i = 0; i < 20; ++i) {
    r.push_back({"ok", "i" + std::to_string(i), Q, 3});
    flags.push_back(i == 0);  // exactly 5 %
    r.push_back({"bad", "i" + std::to_string(i), Q, 3});
    flags.push_back(i < 2);  // 10 %
  }
  EXPECT_EQ(remove_unreliable_subjects(r, flags), std::set<std::string>{"ok"});
  EXPECT_THROW(remove_unreliable_subjects(r, std::vector<bool>(r.size(), true)), ValidationError);
  EXPECT_THROW(remove_unreliable_subjects(r, {}), ValidationError);
}

TEST(ZScores, PoolAcrossDimensionsPerSubject) {
  const std::vector<RawRating> r = {{"a", "x", Q, 1}, {"a", "x", A, 3}, {"a", "y", Q, 5}, {"b", "x", Q, 2}};
  const auto z = zscore_normalize(r);
  EXPECT_DOUBLE_EQ(z.z[0], -1.0);
  EXPECT_DOUBLE_EQ(z.z[1], 0.0);
  EXPECT_DOUBLE_EQ(z.z[2], 1.0);
  EXPECT_DOUBLE_EQ(z.z[3], 0.0);
  EXPECT_EQ(z.zero_sigma, std::vector<std::string>{"b"});
}

TEST(Mos, MapsMeanZOntoHundredPointScale) {
  EXPECT_DOUBLE_EQ(mos_from_z(0.0), 50.0);
  EXPECT_DOUBLE_EQ(mos_from_z(-3.0), 0.0);
  EXPECT_DOUBLE_EQ(mos_from_z(3.0), 100.0);
  EXPECT_DOUBLE_EQ(mos_from_z(4.5), 125.0);  // not clamped
}

TEST(Mos, PipelineExcludesOutliersAndRemovedSubjects) {
  std::vector<RawRating> r;
  for (int img = 0; img < 10; ++img)
    for (int s = 0; s < 6; ++s) {
      double v = 2.0 + 0.2 * img + 0.01 * s;
      if (s == 5 && img < 2) v = 5.0;  // two planted outliers for subject a5
      r.push_back({"a" + std::to_string(s), "img" + std::to_string(img), Q, v});
    }
  const auto res = process_scores(r);
  EXPECT_EQ(res.report.n_outliers, 2u);
  EXPECT_EQ(res.report.removed_subjects, std::vector<std::string>{"a5"});
  EXPECT_EQ(res.mos.size(), 10u);
  for (const auto& m : res.mos) EXPECT_EQ(m.n_subjects, 5u);
  const auto want = testing::oracle_scores(r);
  for (const auto& m : res.mos) EXPECT_NEAR(m.score, want.mos.at({m.edited_id, m.dimension}), 1e-9);
}

TEST(Mos, RejectsRatingsOutsideScale) {
  EXPECT_THROW(process_scores({{"a", "x", Q, 0.5}}), ValidationError);
  EXPECT_THROW(process_scores({{"a", "x", Q, 5.01}}), ValidationError);
}

TEST(Mos, RandomCampaignsMatchOracle) {
  Rng rng(17);
  for (int t = 0; t < 50; ++t) {
    const auto c = testing::random_small_campaign(rng);
    const auto want = testing::oracle_scores(c.ratings);
    std::set<std::string> subjects;
    for (const auto& r : c.ratings) subjects.insert(r.annotator_id);
    if (want.removed.size() == subjects.size()) continue;
    const auto got = process_scores(c.ratings);
    EXPECT_EQ(got.outlier_flags, want.flags);
    for (const auto& m : got.mos) EXPECT_NEAR(m.score, want.mos.at({m.edited_id, m.dimension}), 1e-9);
  }
}

std::vector<RawRanking> rankings(const std::vector<std::vector<std::string>>& orders) {
  std::vector<RawRanking> out;
  for (std::size_t i = 0; i < orders.size(); ++i) out.push_back({"r" + std::to_string(i), "g", Q, orders[i]});
  return out;
}

TEST(Concordance, PerfectAndReversedAgreement) {
  EXPECT_DOUBLE_EQ(concordance(rankings({{"a", "b", "c"}, {"a", "b", "c"}, {"a", "b", "c"}})), 1.0);
  EXPECT_DOUBLE_EQ(concordance(rankings({{"a", "b", "c", "d"}, {"d", "c", "b", "a"}})), 0.0);
  EXPECT_THROW(concordance(rankings({{"a", "b"}})), ValidationError);
  EXPECT_THROW(concordance(rankings({{"a"}, {"a"}})), ValidationError);
}

TEST(Concordance, MatchesSpearmanIdentity) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const std::size_t m = 2 + rng.below(9), k = 2 + rng.below(6);
    const auto rs = testing::random_group_rankings(rng, "g", Q, m, k);
    std::vector<std::vector<std::string>> orders;
    for (const auto& r : rs) orders.push_back(r.order);
    EXPECT_NEAR(concordance(rs), testing::kendall_w_from_spearman(orders), 1e-12);
  }
}

TEST(Aggregate, AverageRanksAndFlag) {
  const auto agg = aggregate_rankings(rankings({{"a", "b", "c"}, {"a", "b", "c"}, {"a", "c", "b"}}));
  EXPECT_DOUBLE_EQ(agg.avg_rank.at("a"), 1.0);
  EXPECT_DOUBLE_EQ(agg.avg_rank.at("b"), 7.0 / 3.0);
  EXPECT_DOUBLE_EQ(agg.avg_rank.at("c"), 8.0 / 3.0);
  EXPECT_EQ(agg.rank_sum.at("c"), 8);
  EXPECT_NEAR(agg.concordance, 14.0 * 12.0 / (9.0 * 24.0), 1e-15);
  EXPECT_FALSE(flag_for_reannotation(agg));
  const auto split = aggregate_rankings(rankings({{"a", "b", "c", "d"}, {"d", "c", "b", "a"}}));
  EXPECT_TRUE(flag_for_reannotation(split));
  EXPECT_FALSE(flag_for_reannotation(split, 0.0));
}

TEST(Aggregate, RejectsInconsistentMembership) {
  EXPECT_THROW(aggregate_rankings(rankings({{"a", "b"}, {"a", "c"}})), ValidationError);
  EXPECT_THROW(aggregate_rankings(rankings({{"a", "a"}})), ValidationError);
  EXPECT_THROW(aggregate_rankings({}), ValidationError);
}

TEST(Pairs, OnePerDistinctRankAndTiesSkipped) {
  const auto agg = aggregate_rankings(rankings({{"a", "b", "c"}, {"b", "a", "c"}}));
  const auto pr = rankings_to_pairs(agg);  // a and b tie at 1.5
  EXPECT_EQ(pr.skipped_ties, 1u);
  ASSERT_EQ(pr.pairs.size(), 2u);
  for (const auto& p : pr.pairs) {
    EXPECT_EQ(p.loser, "c");
    EXPECT_DOUBLE_EQ(p.rank_gap, 1.5);
  }
}

TEST(Pairs, ConsistencyCheckFlagsContradictions) {
  const std::vector<PreferencePair> pairs = {{"g", Q, "a", "b", 1}, {"g", Q, "b", "c", 1}, {"g", Q, "a", "z", 1}};
  const ScoreIndex scores = {{{"a", Q}, 40}, {{"b", Q}, 60}, {{"c", Q}, 10}};
  const auto bad = check_pair_score_consistency(pairs, scores);
  ASSERT_EQ(bad.size(), 1u);
  EXPECT_EQ(bad[0].winner, "a");
}

TEST(Rankings, ProcessGroupsByGroupAndDimension) {
  std::vector<RawRanking> all = rankings({{"a", "b", "c"}, {"a", "b", "c"}});
  all.push_back({"r0", "g", A, {"c", "b", "a"}});
  all.push_back({"r0", "h", Q, {"x", "y"}});
  const auto res = process_rankings(all);
  EXPECT_EQ(res.report.n_groups, 3u);
  EXPECT_EQ(res.report.n_pairs, 3u + 3u + 1u);
  EXPECT_TRUE(res.report.flagged_for_reannotation.empty());
}

TEST(Files, JsonLinesRoundTrip) {
  testing::TempDir dir;
  const std::vector<RawRating> r = {{"a", "x", Q, 2.5}, {"b", "x", A, 4}};
  write_jsonl(dir / "r.jsonl", to_json_lines(r));
  const auto back = load_ratings(dir / "r.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].annotator_id, "b");
  EXPECT_EQ(back[1].dimension, A);

  const auto res = process_rankings(rankings({{"a", "b", "c"}, {"b", "a", "c"}}));
  write_jsonl(dir / "agg.jsonl", to_json_lines(res.aggregated));
  write_jsonl(dir / "pairs.jsonl", to_json_lines(res.pairs));
  const auto agg = load_aggregated(dir / "agg.jsonl");
  EXPECT_EQ(agg[0].rank_sum, res.aggregated[0].rank_sum);
  EXPECT_EQ(load_pairs(dir / "pairs.jsonl"), res.pairs);

  write_text(dir / "bad.jsonl", "{\"annotator_id\": \"a\"}\n");
  EXPECT_THROW(load_ratings(dir / "bad.jsonl"), ParseError);
}

}  // namespace
}  // namespace prefedit::subjective
