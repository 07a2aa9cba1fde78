// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "prefedit/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "parallel.hpp"

namespace prefedit::scorer {

std::string_view to_string(QualityLevel l) {
  switch (l) {
    case QualityLevel::kBad: return "bad";
    case QualityLevel::kPoor: return "poor";
    case QualityLevel::kFair: return "fair";
    case QualityLevel::kGood: return "good";
    case QualityLevel::kExcellent: return "excellent";
  }
  return "unknown";
}

void LevelMapper::validate() const {
  if (!(max_score > min_score)) throw ValidationError("level mapper needs max_score > min_score");
}

QualityLevel level_of(double s, const LevelMapper& mapper) {
  mapper.validate();
  const double m = mapper.min_score, M = mapper.max_score;
  if (!(s >= m && s <= M)) throw ValidationError("score " + std::to_string(s) + " outside level range");
  if (s == m) return QualityLevel::kBad;
  for (int i = 1; i <= 5; ++i)
    if (s <= m + static_cast<double>(i) / 5.0 * (M - m)) return static_cast<QualityLevel>(i);
  return QualityLevel::kExcellent;
}

double ScoreTriple::operator[](Dimension d) const {
  switch (d) {
    case Dimension::kQuality: return s_v;
    case Dimension::kAlignment: return s_e;
    case Dimension::kPreservation: return s_p;
  }
  return 0.0;
}

double& ScoreTriple::operator[](Dimension d) {
  switch (d) {
    case Dimension::kQuality: return s_v;
    case Dimension::kAlignment: return s_e;
    default: return s_p;
  }
}

Json to_json(const ScoreTriple& s) { return {{"s_v", s.s_v}, {"s_e", s.s_e}, {"s_p", s.s_p}}; }

ScoreTriple score_triple_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("score triple is not an object");
  ScoreTriple s{get_number(j, "s_v"), get_number(j, "s_e"), get_number(j, "s_p")};
  if (!std::isfinite(s.s_v) || !std::isfinite(s.s_e) || !std::isfinite(s.s_p))
    throw ParseError("non-finite score");
  return s;
}

// --- ToyNet ----------------------------------------------------------------

ToyNet::ToyNet(std::size_t input_dim, std::vector<std::size_t> hidden)
    : net_(Architecture{input_dim, std::move(hidden), kHeadOutputs}), params_(net_.num_params(), 0.0) {}

ToyNet::ToyNet(Architecture arch, std::vector<double> params) : net_(std::move(arch)), params_(std::move(params)) {
  if (net_.architecture().output_dim != kHeadOutputs)
    throw ValidationError("score network must have " + std::to_string(kHeadOutputs) + " outputs");
  if (params_.size() != net_.num_params()) throw ValidationError("parameter count does not match architecture");
}

ToyNet ToyNet::random(std::size_t input_dim, std::vector<std::size_t> hidden, std::uint64_t seed) {
  ToyNet n(input_dim, std::move(hidden));
  Rng rng = Rng::substream(seed, "scorer-init");
  n.params_ = n.net_.init_params(rng);
  return n;
}

void ToyNet::check_input(std::span<const double> features) const {
  if (features.size() != input_dim())
    throw ValidationError("feature dimension " + std::to_string(features.size()) + " != network input " +
                          std::to_string(input_dim()));
}

ScoreTriple ToyNet::predict_raw(std::span<const double> features) const {
  check_input(features);
  MlpTape tape;
  net_.forward(params_, features, tape);
  const auto& out = tape.activations.back();
  return {out[0], out[1], out[2]};
}

ScoreTriple ToyNet::predict(const ScoringItem& item) const {
  ScoreTriple raw = predict_raw(item.features);
  return {raw.s_v * kScoreScale, raw.s_e * kScoreScale, raw.s_p * kScoreScale};
}

void ToyNet::save(const std::filesystem::path& path) const {
  Json j = {{"format", "prefedit.toynet"},
            {"version", 1},
            {"architecture", to_json(net_.architecture())},
            {"params", params_}};
  write_text(path, j.dump() + "\n");
}

ToyNet ToyNet::load(const std::filesystem::path& path, const std::optional<Architecture>& expected) {
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "prefedit.toynet") throw ParseError("not a score-network checkpoint");
  if (j.value("version", 0) != 1) throw ParseError("unsupported checkpoint version");
  Architecture arch = architecture_from_json(j.at("architecture"));
  if (expected && !(*expected == arch)) throw ValidationError("checkpoint architecture does not match");
  return ToyNet(std::move(arch), j.at("params").get<std::vector<double>>());
}

TableScorer TableScorer::from_mos(const std::vector<subjective::MosRecord>& mos) {
  std::map<std::string, ScoreTriple> t;
  for (const auto& m : mos) t[m.edited_id][m.dimension] = m.score;
  return TableScorer(std::move(t));
}

ScoreTriple TableScorer::predict(const ScoringItem& item) const {
  if (constant_) return {*constant_, *constant_, *constant_};
  auto it = table_.find(item.edited_id);
  if (it == table_.end()) throw ValidationError("no score for '" + item.edited_id + "'");
  return it->second;
}

// --- losses ----------------------------------------------------------------

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::array<QualityLevel, 3> levels_of(const ScoreTriple& target, const LevelMapper& mapper) {
  return {level_of(target.s_v, mapper), level_of(target.s_e, mapper), level_of(target.s_p, mapper)};
}

}  // namespace

double ce_from_logits(std::span<const double> logits, const std::array<QualityLevel, 3>& levels,
                      std::span<double> d_logits) {
  if (logits.size() != 3 * kNumLevels) throw ValidationError("expected 3x5 level logits");
  double loss = 0.0;
  for (std::size_t d = 0; d < 3; ++d) {
    const double* z = logits.data() + d * kNumLevels;
    const double zmax = *std::max_element(z, z + kNumLevels);
    double sum = 0.0;
    for (std::size_t k = 0; k < kNumLevels; ++k) sum += std::exp(z[k] - zmax);
    const double log_norm = zmax + std::log(sum);
    const std::size_t target = static_cast<std::size_t>(ordinal(levels[d]) - 1);
    loss += log_norm - z[target];
    if (!d_logits.empty()) {
      for (std::size_t k = 0; k < kNumLevels; ++k) {
        const double p = std::exp(z[k] - log_norm);
        d_logits[d * kNumLevels + k] = (p - (k == target ? 1.0 : 0.0)) / 3.0;
      }
    }
  }
  return loss / 3.0;
}

double mse_from_scores(const ScoreTriple& pred, const ScoreTriple& target, ScoreTriple* d_pred) {
  double loss = 0.0;
  for (Dimension d : kAllDimensions) {
    const double e = pred[d] - target[d];
    loss += e * e;
    if (d_pred) (*d_pred)[d] = 2.0 * e / 3.0;
  }
  return loss / 3.0;
}

double pairwise_from_scores(double s_pos, double s_neg, double* d_pos) {
  if (d_pos) *d_pos = -sigmoid(s_neg - s_pos);
  return softplus(s_neg - s_pos);
}

LossValue ce_loss(const ToyNet& net, std::span<const LabeledItem> batch, const LevelMapper& mapper) {
  LossValue out;
  if (batch.empty()) throw ValidationError("empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  out.loss = detail::reduce_samples(batch.size(), net.net().num_params(), 1, out.grad,
                                    [&](std::size_t i, std::vector<double>& g) {
                                      MlpTape tape;
                                      net.net().forward(net.params(), batch[i].features, tape);
                                      const auto& o = tape.activations.back();
                                      std::vector<double> d_out(kHeadOutputs, 0.0);
                                      const double l = ce_from_logits(
                                          std::span<const double>(o).subspan(3), levels_of(batch[i].target, mapper),
                                          std::span<double>(d_out).subspan(3));
                                      for (auto& v : d_out) v *= inv_n;
                                      net.net().backward(net.params(), tape, d_out, g);
                                      return l * inv_n;
                                    });
  return out;
}

LossValue mse_loss(const ToyNet& net, std::span<const LabeledItem> batch) {
  LossValue out;
  if (batch.empty()) throw ValidationError("empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  out.loss = detail::reduce_samples(batch.size(), net.net().num_params(), 1, out.grad,
                                    [&](std::size_t i, std::vector<double>& g) {
                                      MlpTape tape;
                                      net.net().forward(net.params(), batch[i].features, tape);
                                      const auto& o = tape.activations.back();
                                      const ScoreTriple& t = batch[i].target;
                                      ScoreTriple target{t.s_v / kScoreScale, t.s_e / kScoreScale,
                                                         t.s_p / kScoreScale};
                                      ScoreTriple d;
                                      const double l = mse_from_scores({o[0], o[1], o[2]}, target, &d);
                                      std::vector<double> d_out(kHeadOutputs, 0.0);
                                      d_out[0] = d.s_v * inv_n;
                                      d_out[1] = d.s_e * inv_n;
                                      d_out[2] = d.s_p * inv_n;
                                      net.net().backward(net.params(), tape, d_out, g);
                                      return l * inv_n;
                                    });
  return out;
}

LossValue pairwise_loss(const ToyNet& net, std::span<const PairExample> batch) {
  LossValue out;
  if (batch.empty()) throw ValidationError("empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  out.loss = detail::reduce_samples(batch.size(), net.net().num_params(), 1, out.grad,
                                    [&](std::size_t i, std::vector<double>& g) {
                                      const PairExample& p = batch[i];
                                      const std::size_t d = index_of(p.dimension);
                                      MlpTape win, lose;
                                      net.net().forward(net.params(), p.winner, win);
                                      net.net().forward(net.params(), p.loser, lose);
                                      double d_pos = 0.0;
                                      const double l = pairwise_from_scores(win.activations.back()[d],
                                                                            lose.activations.back()[d], &d_pos);
                                      std::vector<double> d_out(kHeadOutputs, 0.0);
                                      d_out[d] = d_pos * inv_n;
                                      net.net().backward(net.params(), win, d_out, g);
                                      d_out[d] = -d_pos * inv_n;
                                      net.net().backward(net.params(), lose, d_out, g);
                                      return l * inv_n;
                                    });
  return out;
}

// --- training --------------------------------------------------------------

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::kTextual: return "textual";
    case Stage::kPointwise: return "pointwise";
    case Stage::kPairwise: return "pairwise";
  }
  return "unknown";
}

Stage stage_from_string(std::string_view s) {
  if (s == "textual") return Stage::kTextual;
  if (s == "pointwise") return Stage::kPointwise;
  if (s == "pairwise") return Stage::kPairwise;
  throw ValidationError("unknown stage '" + std::string(s) + "'");
}

LossKind loss_kind_from_string(std::string_view s) {
  if (s == "ce") return LossKind::kCrossEntropy;
  if (s == "mse") return LossKind::kMse;
  if (s == "pairwise") return LossKind::kPairwise;
  throw ValidationError("unknown loss kind '" + std::string(s) + "'");
}

std::vector<std::vector<std::size_t>> curriculum_schedule(const std::vector<double>& rank_gaps, Rng& rng) {
  if (rank_gaps.empty()) return {};
  std::vector<double> sorted = rank_gaps;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 ? sorted[n / 2] : (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0;
  std::vector<std::size_t> large, small;
  for (std::size_t i = 0; i < n; ++i) (rank_gaps[i] > median ? large : small).push_back(i);
  std::vector<std::vector<std::size_t>> phases;
  if (!large.empty()) {
    rng.shuffle(large);
    phases.push_back(std::move(large));
  }
  rng.shuffle(small);
  phases.push_back(std::move(small));
  return phases;
}

LevelMapper mapper_for(std::span<const LabeledItem> items) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& it : items)
    for (Dimension d : kAllDimensions) {
      lo = std::min(lo, it.target[d]);
      hi = std::max(hi, it.target[d]);
    }
  if (items.empty()) return {};
  if (!(hi > lo)) hi = lo + 1.0;
  return {lo, hi};
}

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

TrainResult train(const ToyNet& net, Stage stage, const TrainData& data, const TrainConfig& config) {
  TrainResult res{net, {}, {}};
  if (config.epochs == 0) return res;
  if (config.batch_size == 0) throw ValidationError("batch size must be positive");
  if (!(config.step_size > 0.0)) throw ValidationError("step size must be positive");

  const bool pairwise = stage == Stage::kPairwise;
  const std::size_t n = pairwise ? data.pairs.size() : data.items.size();
  if (n == 0) throw ValidationError(std::string("no training data for stage ") + std::string(to_string(stage)));
  const LevelMapper mapper = data.mapper ? *data.mapper : mapper_for(data.items);
  for (const auto& it : data.items) res.net.check_input(it.features);

  Rng rng = Rng::substream(config.seed, std::string("shuffle:") + std::string(to_string(stage)));
  std::vector<double> gaps;
  for (const auto& p : data.pairs) gaps.push_back(p.rank_gap);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::vector<std::size_t>> phases;
    if (pairwise) {
      phases = curriculum_schedule(gaps, rng);
      if (epoch == 0)
        for (const auto& ph : phases) res.phase_sizes.push_back(ph.size());
    } else {
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order);
      phases.push_back(std::move(order));
    }

    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (const auto& phase : phases) {
      for (std::size_t lo = 0; lo < phase.size(); lo += config.batch_size) {
        const std::size_t hi = std::min(phase.size(), lo + config.batch_size);
        LossValue lv;
        if (pairwise) {
          std::vector<PairExample> batch;
          for (std::size_t k = lo; k < hi; ++k) batch.push_back(data.pairs[phase[k]]);
          lv = pairwise_loss(res.net, batch);
        } else {
          std::vector<LabeledItem> batch;
          for (std::size_t k = lo; k < hi; ++k) batch.push_back(data.items[phase[k]]);
          lv = stage == Stage::kTextual ? ce_loss(res.net, batch, mapper) : mse_loss(res.net, batch);
        }
        if (!std::isfinite(lv.loss) || !all_finite(lv.grad))
          throw DivergenceError("non-finite loss in stage " + std::string(to_string(stage)) + " epoch " +
                                    std::to_string(epoch),
                                res.net);
        auto& p = res.net.mutable_params();
        std::vector<double> before = p;
        for (std::size_t k = 0; k < p.size(); ++k) p[k] -= config.step_size * lv.grad[k];
        if (!all_finite(p)) {
          ToyNet last_good = res.net;
          last_good.mutable_params() = std::move(before);
          throw DivergenceError("non-finite parameters in stage " + std::string(to_string(stage)), last_good);
        }
        epoch_loss += lv.loss;
        ++n_batches;
      }
    }
    res.epoch_losses.push_back(epoch_loss / static_cast<double>(n_batches));
  }
  return res;
}

TrainResult train_all(const ToyNet& net, const TrainData& data, const TrainConfig& config) {
  TrainResult out{net, {}, {}};
  for (Stage s : {Stage::kTextual, Stage::kPointwise, Stage::kPairwise}) {
    TrainResult r = train(out.net, s, data, config);
    out.net = std::move(r.net);
    out.epoch_losses.insert(out.epoch_losses.end(), r.epoch_losses.begin(), r.epoch_losses.end());
    if (!r.phase_sizes.empty()) out.phase_sizes = r.phase_sizes;
  }
  return out;
}

double grad_check(const Scorer& scorer, LossKind kind, const TrainData& sample, double h) {
  const auto* toy = dynamic_cast<const ToyNet*>(&scorer);
  if (!toy) throw UnsupportedError("gradient check needs a toy-net backend, got " + scorer.kind());
  const LevelMapper mapper = sample.mapper ? *sample.mapper : mapper_for(sample.items);
  auto eval = [&](const ToyNet& n) {
    switch (kind) {
      case LossKind::kCrossEntropy: return ce_loss(n, sample.items, mapper);
      case LossKind::kMse: return mse_loss(n, sample.items);
      case LossKind::kPairwise: return pairwise_loss(n, sample.pairs);
    }
    return LossValue{};
  };
  const LossValue analytic = eval(*toy);
  ToyNet probe = *toy;
  double worst = 0.0;
  for (std::size_t k = 0; k < analytic.grad.size(); ++k) {
    auto& p = probe.mutable_params();
    const double orig = p[k];
    p[k] = orig + h;
    const double up = eval(probe).loss;
    p[k] = orig - h;
    const double down = eval(probe).loss;
    p[k] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic.grad[k];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

// --- evaluation ------------------------------------------------------------

ScoringItem make_item(const data::Manifest& manifest, const std::string& edited_id,
                      const std::map<std::string, std::vector<double>>& features) {
  ScoringItem item;
  item.edited_id = edited_id;
  if (auto it = features.find(edited_id); it != features.end()) item.features = it->second;
  if (const data::EditedItem* e = manifest.find_edition(edited_id)) {
    item.edited_ref = e->image_ref;
    if (const data::SourceItem* s = manifest.find_source(e->source_id)) {
      item.source_ref = s->image_ref;
      item.prompt = !s->prompt_instruction.empty() ? s->prompt_instruction : s->prompt_description.value_or("");
    }
  }
  return item;
}

Evaluation evaluate(const Scorer& scorer, const data::Manifest& manifest,
                    const std::map<std::string, std::vector<double>>& features,
                    const std::vector<subjective::MosRecord>& mos,
                    const std::vector<subjective::PreferencePair>& pairs) {
  const auto human = subjective::index_scores(mos);
  std::set<std::string> with_mos;
  for (const auto& m : mos) with_mos.insert(m.edited_id);

  Evaluation ev;
  std::map<std::string, ScoreTriple> predicted;
  for (const auto& e : manifest.editions) {
    if (!with_mos.count(e.edited_id)) continue;
    try {
      predicted[e.edited_id] = scorer.predict(make_item(manifest, e.edited_id, features));
    } catch (const Error&) {
      ev.unscorable.push_back(e.edited_id);
    }
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (Dimension d : kAllDimensions) {
    metrics::MetricReport r;
    std::vector<double> p, h;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
    std::map<std::string, double> pred_d;
    for (const auto& [id, s] : predicted) {
      pred_d[id] = s[d];
      auto it = human.find({id, d});
      if (it == human.end()) continue;
      p.push_back(s[d]);
      h.push_back(it->second);
      const auto& src = manifest.find_edition(id)->source_id;
      groups[src].first.push_back(s[d]);
      groups[src].second.push_back(it->second);
    }
    r.n_samples = p.size();
    try {
      r.srcc_global = metrics::srcc(p, h);
      r.plcc_global = metrics::plcc(p, h);
    } catch (const Error&) {
      r.srcc_global = r.plcc_global = nan;
    }
    std::vector<std::pair<std::vector<double>, std::vector<double>>> gv;
    for (auto& [_, g] : groups)
      if (g.first.size() >= 2) gv.push_back(std::move(g));
    try {
      auto gs = metrics::group_srcc(gv);
      r.srcc_group = gs.mean;
      r.n_groups = gs.n_used;
      r.n_skipped_groups = gs.n_skipped;
    } catch (const Error&) {
      r.srcc_group = nan;
      r.n_skipped_groups = gv.size();
    }
    std::vector<subjective::PreferencePair> dim_pairs;
    for (const auto& pr : pairs)
      if (pr.dimension == d && pred_d.count(pr.winner) && pred_d.count(pr.loser)) dim_pairs.push_back(pr);
    r.n_pairs = dim_pairs.size();
    r.acc = dim_pairs.empty() ? nan : metrics::pair_accuracy(pred_d, dim_pairs);
    ev.per_dimension[d] = r;
  }
  return ev;
}

std::map<std::string, std::vector<double>> load_features(const std::filesystem::path& path) {
  std::map<std::string, std::vector<double>> out;
  std::size_t dim = 0;
  for_each_jsonl(path, [&](const Json& j, std::size_t line) {
    const std::string id = get_string(j, "edited_id", line);
    if (!j.contains("features") || !j["features"].is_array()) throw ParseError("missing 'features' array", line);
    auto v = j["features"].get<std::vector<double>>();
    if (dim == 0) dim = v.size();
    if (v.size() != dim) throw ParseError("feature dimension differs from earlier records", line);
    if (!out.emplace(id, std::move(v)).second) throw ParseError("duplicate features for '" + id + "'", line);
  });
  return out;
}

}  // namespace prefedit::scorer
