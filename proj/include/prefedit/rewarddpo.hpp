// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Preference-pair construction from scorer outputs or human rankings, and
// flow-matching DPO on a small velocity network.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefedit/datamodel.hpp"
#include "prefedit/metrics.hpp"
#include "prefedit/mlp.hpp"
#include "prefedit/random.hpp"
#include "prefedit/scorer.hpp"
#include "prefedit/subjective.hpp"

namespace prefedit::dpo {

using Sample = std::vector<double>;

struct Variant {
  std::string variant_id;
  Sample sample;
  scorer::ScoreTriple scores;  // MOS scale
  /// Scorer input; only needed when `scores` are produced by a model.
  std::vector<double> features;
};

struct SeedGroup {
  std::string instruction_id;
  std::string task;
  std::vector<Variant> variants;
};

enum class Strategy { kSelf, kGlobal };
std::string_view to_string(Strategy s);

struct DpoPair {
  std::string instruction_id;
  std::string task;
  std::string chosen_ref;
  std::string rejected_ref;
  Sample chosen;
  Sample rejected;
  double chosen_overall = 0.0;
  double chosen_average = 0.0;
  double rejected_average = 0.0;
  Strategy strategy = Strategy::kSelf;
};

enum class Reason { kBelowThreshold, kLowerHalfDiscarded, kTieAtExtreme, kTooFewVariants };
std::string_view to_string(Reason r);

struct AuditEntry {
  std::string instruction_id;
  std::string task;
  Reason reason = Reason::kBelowThreshold;
  std::string detail;
};

struct PairBuild {
  std::vector<DpoPair> pairs;
  std::vector<AuditEntry> audit;
  std::size_t n_groups = 0;
};

struct PairConfig {
  double low_quality_threshold = 60.0;  // tau, MOS scale
  metrics::OverallWeights weights;
};

/// Chosen = highest mean score, rejected = lowest (variant_id breaks ties).
/// Drops groups whose best overall is below tau, then keeps the upper half
/// (rounded up) of each task's pairs ranked by chosen overall.
PairBuild build_self_pairs(const std::vector<SeedGroup>& groups, const PairConfig& config);

/// Chosen/rejected are the extremes of the group ranking (mean of the three
/// per-dimension average ranks). Ties at either extreme skip the group.
PairBuild build_global_pairs(const std::vector<subjective::AggregatedRanking>& rankings,
                             const std::vector<subjective::MosRecord>& mos,
                             const data::Manifest& manifest, const PairConfig& config);

Json to_json(const DpoPair& p);
Json to_json(const AuditEntry& a);
Json audit_json(const PairBuild& b);

DpoPair dpo_pair_from_json(const Json& j, std::size_t line = 0);
std::vector<DpoPair> load_dpo_pairs(const std::filesystem::path& path);

/// {"instruction_id", "task", "variants": [{"variant_id", "sample", "scores"?, "features"?}]}
SeedGroup seed_group_from_json(const Json& j, std::size_t line = 0);
std::vector<SeedGroup> load_seed_groups(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Flow matching.

/// x_t = (1 - t) x0 + t eps. Throws ValidationError for t outside [0, 1].
Sample sample_xt(std::span<const double> x0, std::span<const double> eps, double t);

/// Velocity network v(x_t, t) over a flat parameter vector plus a frozen reference.
class FlowModel {
 public:
  FlowModel(std::size_t dim, std::vector<std::size_t> hidden, std::uint64_t seed);
  FlowModel(Architecture arch, std::vector<double> params, std::vector<double> reference);

  std::size_t dim() const { return net_.architecture().output_dim; }
  const Mlp& net() const { return net_; }
  std::span<const double> params() const { return params_; }
  std::vector<double>& mutable_params() { return params_; }
  std::span<const double> reference() const { return reference_; }

  /// Copies the current parameters into the reference slot.
  void snapshot_reference() { reference_ = params_; }

  Sample velocity(std::span<const double> params, std::span<const double> xt, double t) const;

  void save(const std::filesystem::path& path) const;
  static FlowModel load(const std::filesystem::path& path,
                        const std::optional<Architecture>& expected = std::nullopt);

 private:
  Mlp net_;
  std::vector<double> params_;
  std::vector<double> reference_;
};

struct DpoConfig {
  double beta_g = 1.0;
  double step_size = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  bool shared_noise = true;  // one eps per pair, shared by chosen and rejected
  std::size_t threads = 1;

  void validate() const;
};

/// beta * (||(eps - x0) - v_model(x_t, t)||^2 - ||(eps - x0) - v_ref(x_t, t)||^2)
double delta_theta(std::span<const double> x0, std::span<const double> eps, double t,
                   const FlowModel& model, std::span<const double> model_params,
                   std::span<const double> reference_params, double beta_g);

/// Noise draws of one pair.
struct PairDraw {
  double t = 0.0;
  Sample eps_chosen;
  Sample eps_rejected;
};

std::vector<PairDraw> draw_noise(std::size_t n_pairs, std::size_t dim, bool shared, Rng& rng);

struct DpoLoss {
  double loss = 0.0;
  double mean_margin = 0.0;  // mean of (delta_rejected - delta_chosen)
  std::vector<double> grad;
};

/// -mean log sigmoid(delta_rejected - delta_chosen) for fixed draws.
DpoLoss dpo_loss(std::span<const DpoPair> pairs, const FlowModel& model, const std::vector<PairDraw>& draws,
                 const DpoConfig& config);

/// Draws (t, eps) from `rng` then evaluates the loss.
DpoLoss dpo_loss(std::span<const DpoPair> pairs, const FlowModel& model, const DpoConfig& config, Rng& rng);

struct DpoTrainResult {
  FlowModel model;
  std::vector<double> epoch_losses;
  std::vector<double> epoch_margins;
};

/// Minibatch SGD on dpo_loss. The model's reference slot is never written.
/// Throws NumericError when a batch loss is not finite.
DpoTrainResult train_dpo(std::span<const DpoPair> pairs, const FlowModel& model, const DpoConfig& config);

}  // namespace prefedit::dpo
