// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "prefedit/annsvc.hpp"
#include "prefedit/datamodel.hpp"
#include "prefedit/random.hpp"
#include "prefedit/rewarddpo.hpp"
#include "prefedit/scorer.hpp"
#include "prefedit/subjective.hpp"

namespace prefedit::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// --- subjective --------------------------------------------------------------

struct SmallCampaign {
  std::vector<subjective::RawRating> ratings;
  std::vector<subjective::RawRanking> rankings;
};

/// At most 8 images and 6 subjects; some cells carry a planted extreme rating
/// and some subjects rate everything identically.
SmallCampaign random_small_campaign(Rng& rng);

/// k rankings of m items, each a few random swaps away from a shared order.
std::vector<subjective::RawRanking> random_group_rankings(Rng& rng, const std::string& group, Dimension dim,
                                                          std::size_t m, std::size_t k);

// --- scorer --------------------------------------------------------------------

struct PlantedOptions {
  std::size_t n_groups = 500;
  std::size_t group_size = 4;
  std::size_t dim = 8;
  std::size_t test_groups = 100;
  double label_fraction = 0.3;  // train items with a pointwise label
  double label_noise = 12.0;    // MOS-scale sd of those labels
  double rank_noise = 3.0;      // MOS-scale sd behind the training rankings
  double test_noise = 1.0;      // MOS-scale sd of held-out MOS
  std::uint64_t seed = 7;
};

/// Scores linear in the features. Train groups contribute noisy labels and
/// ranking pairs; held-out groups carry near-exact MOS and their true pairs.
struct PlantedData {
  data::Manifest manifest;
  std::map<std::string, std::vector<double>> features;
  scorer::TrainData train;
  std::vector<subjective::MosRecord> test_mos;
  std::vector<subjective::PreferencePair> test_pairs;
};

PlantedData planted_linear(const PlantedOptions& opt = {});

/// Random labeled items and pairs for gradient probes.
scorer::TrainData random_train_data(Rng& rng, std::size_t dim, std::size_t n_items, std::size_t n_pairs);

// --- dpo -------------------------------------------------------------------------

/// n pairs whose chosen sample is always `a` and rejected always `b`.
std::vector<dpo::DpoPair> constant_dpo_pairs(std::size_t n, const dpo::Sample& a, const dpo::Sample& b);

struct AuditFixture {
  std::vector<dpo::SeedGroup> groups;
  double tau = 60.0;
  /// instruction ids whose best overall reaches tau, by task
  std::map<std::string, std::vector<std::string>> above_by_task;
  /// best overall per instruction id
  std::map<std::string, double> best_overall;
};

/// 40 groups over 4 tasks with exactly known overall scores; every variant's
/// three scores are equal, so its overall equals that value.
AuditFixture audit_fixture();

// --- annotation service --------------------------------------------------------

/// Ranking and scoring tasks with 12 gold tasks (6 of each kind).
annsvc::CampaignConfig small_campaign_config(std::size_t n_ranking = 6, std::size_t n_scoring = 6);

/// A body answering `task` that is correct for the gold expectation when `right`.
Json gold_body(const annsvc::GoldTask& gold, bool right);

/// A valid response body for an ordinary task.
Json valid_body(const annsvc::Task& task, std::uint64_t salt = 0);

}  // namespace prefedit::testing
