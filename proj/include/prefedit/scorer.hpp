// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefedit/datamodel.hpp"
#include "prefedit/dimension.hpp"
#include "prefedit/error.hpp"
#include "prefedit/metrics.hpp"
#include "prefedit/mlp.hpp"
#include "prefedit/subjective.hpp"

namespace prefedit::scorer {

enum class QualityLevel { kBad = 1, kPoor = 2, kFair = 3, kGood = 4, kExcellent = 5 };

std::string_view to_string(QualityLevel l);
inline int ordinal(QualityLevel l) { return static_cast<int>(l); }

struct LevelMapper {
  double min_score = 0.0;
  double max_score = 100.0;

  void validate() const;
};

/// Five equal-width, right-closed buckets over [m, M]; s == m maps to kBad.
/// Throws ValidationError for s outside [m, M].
QualityLevel level_of(double s, const LevelMapper& mapper);

struct ScoreTriple {
  double s_v = 0.0;  // quality
  double s_e = 0.0;  // alignment
  double s_p = 0.0;  // preservation

  double operator[](Dimension d) const;
  double& operator[](Dimension d);
  double mean() const { return (s_v + s_e + s_p) / 3.0; }
  metrics::DimensionScores as_dimension_scores() const { return {s_v, s_e, s_p}; }
  bool operator==(const ScoreTriple&) const = default;
};

Json to_json(const ScoreTriple& s);
ScoreTriple score_triple_from_json(const Json& j);

/// Everything a backend may need to score one edited item.
struct ScoringItem {
  std::string edited_id;
  std::vector<double> features;
  std::string source_ref;
  std::string edited_ref;
  std::string prompt;
};

/// Any model that maps an edited item to a score triple on the MOS scale.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual ScoreTriple predict(const ScoringItem& item) const = 0;
  virtual std::string kind() const = 0;
};

/// Score scale of the outputs of predict(); the network itself regresses scores / kScoreScale.
inline constexpr double kScoreScale = 100.0;
inline constexpr std::size_t kNumLevels = 5;
inline constexpr std::size_t kHeadOutputs = 3 + 3 * kNumLevels;

/// Shared tanh trunk with one linear head: 3 score outputs followed by 3x5 level logits.
class ToyNet : public Scorer {
 public:
  ToyNet(std::size_t input_dim, std::vector<std::size_t> hidden);
  ToyNet(Architecture arch, std::vector<double> params);

  static ToyNet random(std::size_t input_dim, std::vector<std::size_t> hidden, std::uint64_t seed);

  ScoreTriple predict(const ScoringItem& item) const override;
  std::string kind() const override { return "toy-net"; }

  /// Raw (internal-scale) scores for a feature vector.
  ScoreTriple predict_raw(std::span<const double> features) const;

  const Mlp& net() const { return net_; }
  const Architecture& architecture() const { return net_.architecture(); }
  std::size_t input_dim() const { return net_.architecture().input_dim; }
  std::span<const double> params() const { return params_; }
  std::vector<double>& mutable_params() { return params_; }

  void save(const std::filesystem::path& path) const;
  /// Throws ValidationError when `expected` is given and differs from the file.
  static ToyNet load(const std::filesystem::path& path,
                     const std::optional<Architecture>& expected = std::nullopt);

  /// Throws ValidationError on a feature-dimension mismatch.
  void check_input(std::span<const double> features) const;

 private:

  Mlp net_;
  std::vector<double> params_;
};

/// Lookup-table backend (precomputed or human scores).
class TableScorer : public Scorer {
 public:
  explicit TableScorer(std::map<std::string, ScoreTriple> table) : table_(std::move(table)) {}
  static TableScorer from_mos(const std::vector<subjective::MosRecord>& mos);
  static TableScorer constant(double value) { return TableScorer(value); }

  ScoreTriple predict(const ScoringItem& item) const override;
  std::string kind() const override { return "table"; }

 private:
  explicit TableScorer(double constant) : constant_(constant) {}
  std::map<std::string, ScoreTriple> table_;
  std::optional<double> constant_;
};

// ---------------------------------------------------------------------------
// Losses. Values returned with d(loss)/d(params) of a ToyNet.

struct LossValue {
  double loss = 0.0;
  std::vector<double> grad;
};

struct LabeledItem {
  std::vector<double> features;
  ScoreTriple target;  // MOS scale
};

struct PairExample {
  std::vector<double> winner;
  std::vector<double> loser;
  Dimension dimension = Dimension::kQuality;
  double rank_gap = 1.0;
};

/// Cross-entropy of one 3x5 logit block: mean over dimensions of -log softmax(true level).
/// `d_logits` receives the gradient (same layout as `logits`).
double ce_from_logits(std::span<const double> logits, const std::array<QualityLevel, 3>& levels,
                      std::span<double> d_logits);

/// Mean over dimensions of squared error; `d_pred` receives the gradient.
double mse_from_scores(const ScoreTriple& pred, const ScoreTriple& target, ScoreTriple* d_pred);

/// log(1 + exp(s_neg - s_pos)), stable for large margins. Optional derivative w.r.t. s_pos.
double pairwise_from_scores(double s_pos, double s_neg, double* d_pos = nullptr);

/// Stage 1: targets bucketed by `mapper` (MOS scale).
LossValue ce_loss(const ToyNet& net, std::span<const LabeledItem> batch, const LevelMapper& mapper);
/// Stage 2: targets divided by kScoreScale before comparison.
LossValue mse_loss(const ToyNet& net, std::span<const LabeledItem> batch);
/// Stage 3: mean logistic pair loss on each pair's own dimension.
LossValue pairwise_loss(const ToyNet& net, std::span<const PairExample> batch);

// ---------------------------------------------------------------------------
// Training.

enum class Stage { kTextual, kPointwise, kPairwise };
std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view s);

struct TrainConfig {
  double step_size = 0.05;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct TrainData {
  std::vector<LabeledItem> items;
  std::vector<PairExample> pairs;
  /// Level range for stage 1; derived from the item targets when absent.
  std::optional<LevelMapper> mapper;
};

/// Two phases split at the median rank gap: gaps above the median first, each
/// phase shuffled with `rng`. A single phase when nothing lies above the median.
std::vector<std::vector<std::size_t>> curriculum_schedule(const std::vector<double>& rank_gaps, Rng& rng);

struct TrainResult {
  ToyNet net;
  std::vector<double> epoch_losses;
  /// Number of pairs per curriculum phase (pairwise stage only).
  std::vector<std::size_t> phase_sizes;
};

/// Raised when a loss becomes non-finite; carries the last finite-loss parameters.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, ToyNet last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const ToyNet& last_good() const { return last_good_; }

 private:
  ToyNet last_good_;
};

/// Plain minibatch SGD on one stage's loss.
TrainResult train(const ToyNet& net, Stage stage, const TrainData& data, const TrainConfig& config);

/// Runs textual, pointwise and pairwise stages in order.
TrainResult train_all(const ToyNet& net, const TrainData& data, const TrainConfig& config);

enum class LossKind { kCrossEntropy, kMse, kPairwise };
LossKind loss_kind_from_string(std::string_view s);

/// Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-6)
/// with central differences of step `h`.
double grad_check(const Scorer& scorer, LossKind kind, const TrainData& sample, double h = 1e-5);

/// Builds a mapper spanning the min and max target over every dimension.
LevelMapper mapper_for(std::span<const LabeledItem> items);

// ---------------------------------------------------------------------------
// Evaluation.

struct Evaluation {
  std::map<Dimension, metrics::MetricReport> per_dimension;
  std::vector<std::string> unscorable;
};

/// Scores every edition of `manifest` that has MOS and computes global and
/// group statistics per dimension; groups are source ids.
Evaluation evaluate(const Scorer& scorer, const data::Manifest& manifest,
                    const std::map<std::string, std::vector<double>>& features,
                    const std::vector<subjective::MosRecord>& mos,
                    const std::vector<subjective::PreferencePair>& pairs);

ScoringItem make_item(const data::Manifest& manifest, const std::string& edited_id,
                      const std::map<std::string, std::vector<double>>& features);

/// features JSONL: {"edited_id": ..., "features": [...]}
std::map<std::string, std::vector<double>> load_features(const std::filesystem::path& path);

}  // namespace prefedit::scorer
