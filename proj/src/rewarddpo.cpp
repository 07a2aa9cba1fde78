// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "prefedit/rewarddpo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "parallel.hpp"

namespace prefedit::dpo {

std::string_view to_string(Strategy s) { return s == Strategy::kSelf ? "self" : "global"; }

std::string_view to_string(Reason r) {
  switch (r) {
    case Reason::kBelowThreshold: return "below_threshold";
    case Reason::kLowerHalfDiscarded: return "lower_half_discarded";
    case Reason::kTieAtExtreme: return "tie_at_extreme";
    case Reason::kTooFewVariants: return "too_few_variants";
  }
  return "unknown";
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// Keeps the upper half (rounded up) of each task's pairs by chosen overall.
void keep_upper_half(std::vector<DpoPair>& pairs, std::vector<AuditEntry>& audit) {
  std::stable_sort(pairs.begin(), pairs.end(), [](const DpoPair& a, const DpoPair& b) {
    if (a.task != b.task) return a.task < b.task;
    if (a.chosen_overall != b.chosen_overall) return a.chosen_overall > b.chosen_overall;
    return a.instruction_id < b.instruction_id;
  });
  std::vector<DpoPair> kept;
  for (std::size_t i = 0; i < pairs.size();) {
    std::size_t j = i;
    while (j < pairs.size() && pairs[j].task == pairs[i].task) ++j;
    const std::size_t n = j - i, keep = (n + 1) / 2;
    for (std::size_t k = i; k < j; ++k) {
      if (k - i < keep) {
        kept.push_back(std::move(pairs[k]));
      } else {
        audit.push_back({pairs[k].instruction_id, pairs[k].task, Reason::kLowerHalfDiscarded,
                         "rank " + std::to_string(k - i + 1) + " of " + std::to_string(n) + " in task"});
      }
    }
    i = j;
  }
  pairs = std::move(kept);
}

}  // namespace

PairBuild build_self_pairs(const std::vector<SeedGroup>& groups, const PairConfig& config) {
  config.weights.validate();
  PairBuild out;
  out.n_groups = groups.size();
  for (const auto& g : groups) {
    if (g.variants.size() < 2) {
      out.audit.push_back({g.instruction_id, g.task, Reason::kTooFewVariants,
                           std::to_string(g.variants.size()) + " variant(s)"});
      continue;
    }
    double best_overall = -std::numeric_limits<double>::infinity();
    for (const auto& v : g.variants)
      best_overall = std::max(best_overall, metrics::overall_score(v.scores.as_dimension_scores(), config.weights));
    if (best_overall < config.low_quality_threshold) {
      out.audit.push_back({g.instruction_id, g.task, Reason::kBelowThreshold,
                           "best overall " + fmt(best_overall) + " < " + fmt(config.low_quality_threshold)});
      continue;
    }
    // Lowest variant_id wins ties at both ends.
    const Variant* hi = nullptr;
    const Variant* lo = nullptr;
    for (const auto& v : g.variants) {
      const double m = v.scores.mean();
      if (!hi || m > hi->scores.mean() || (m == hi->scores.mean() && v.variant_id < hi->variant_id)) hi = &v;
      if (!lo || m < lo->scores.mean() || (m == lo->scores.mean() && v.variant_id < lo->variant_id)) lo = &v;
    }
    if (hi == lo) {
      out.audit.push_back({g.instruction_id, g.task, Reason::kTieAtExtreme, "all variants share one average"});
      continue;
    }
    DpoPair p;
    p.instruction_id = g.instruction_id;
    p.task = g.task;
    p.chosen_ref = hi->variant_id;
    p.rejected_ref = lo->variant_id;
    p.chosen = hi->sample;
    p.rejected = lo->sample;
    p.chosen_overall = metrics::overall_score(hi->scores.as_dimension_scores(), config.weights);
    p.chosen_average = hi->scores.mean();
    p.rejected_average = lo->scores.mean();
    p.strategy = Strategy::kSelf;
    out.pairs.push_back(std::move(p));
  }
  keep_upper_half(out.pairs, out.audit);
  return out;
}

PairBuild build_global_pairs(const std::vector<subjective::AggregatedRanking>& rankings,
                             const std::vector<subjective::MosRecord>& mos,
                             const data::Manifest& manifest, const PairConfig& config) {
  config.weights.validate();
  const auto scores = subjective::index_scores(mos);
  auto triple_of = [&](const std::string& id) {
    scorer::ScoreTriple t;
    for (Dimension d : kAllDimensions) {
      auto it = scores.find({id, d});
      if (it == scores.end())
        throw IntegrityError("no " + std::string(to_string(d)) + " MOS for '" + id + "'");
      t[d] = it->second;
    }
    return t;
  };

  std::map<std::string, std::vector<const subjective::AggregatedRanking*>> by_group;
  for (const auto& r : rankings) by_group[r.group_id].push_back(&r);

  PairBuild out;
  out.n_groups = by_group.size();
  for (const auto& [group_id, dims] : by_group) {
    std::map<std::string, double> mean_rank;
    for (const auto* r : dims) {
      if (r->avg_rank.size() != dims.front()->avg_rank.size())
        throw IntegrityError("group '" + group_id + "' has different members across dimensions");
      for (const auto& [id, rank] : r->avg_rank) mean_rank[id] += rank / static_cast<double>(dims.size());
    }
    if (mean_rank.size() != dims.front()->avg_rank.size())
      throw IntegrityError("group '" + group_id + "' has different members across dimensions");
    const std::string task =
        mean_rank.empty() ? std::string() : manifest.task_of(mean_rank.begin()->first);
    if (mean_rank.size() < 2) {
      out.audit.push_back({group_id, task, Reason::kTooFewVariants, std::to_string(mean_rank.size()) + " member(s)"});
      continue;
    }
    double best_overall = -std::numeric_limits<double>::infinity();
    for (const auto& [id, _] : mean_rank)
      best_overall = std::max(best_overall, metrics::overall_score(triple_of(id).as_dimension_scores(), config.weights));
    if (best_overall < config.low_quality_threshold) {
      out.audit.push_back({group_id, task, Reason::kBelowThreshold,
                           "best overall " + fmt(best_overall) + " < " + fmt(config.low_quality_threshold)});
      continue;
    }
    auto [lo_it, hi_it] = std::minmax_element(mean_rank.begin(), mean_rank.end(),
                                              [](const auto& a, const auto& b) { return a.second < b.second; });
    const double first = lo_it->second, last = hi_it->second;
    std::size_t n_first = 0, n_last = 0;
    for (const auto& [_, r] : mean_rank) {
      n_first += r == first;
      n_last += r == last;
    }
    if (n_first > 1 || n_last > 1) {
      out.audit.push_back({group_id, task, Reason::kTieAtExtreme,
                           n_first > 1 ? "tie for first place" : "tie for last place"});
      continue;
    }
    const auto chosen = triple_of(lo_it->first), rejected = triple_of(hi_it->first);
    DpoPair p;
    p.instruction_id = group_id;
    p.task = task;
    p.chosen_ref = lo_it->first;
    p.rejected_ref = hi_it->first;
    p.chosen_overall = metrics::overall_score(chosen.as_dimension_scores(), config.weights);
    p.chosen_average = chosen.mean();
    p.rejected_average = rejected.mean();
    p.strategy = Strategy::kGlobal;
    out.pairs.push_back(std::move(p));
  }
  return out;
}

Json to_json(const DpoPair& p) {
  Json j = {{"instruction_id", p.instruction_id}, {"task", p.task},
            {"chosen_ref", p.chosen_ref},         {"rejected_ref", p.rejected_ref},
            {"chosen_overall", p.chosen_overall}, {"chosen_average", p.chosen_average},
            {"rejected_average", p.rejected_average}, {"strategy", to_string(p.strategy)}};
  if (!p.chosen.empty()) j["chosen"] = p.chosen;
  if (!p.rejected.empty()) j["rejected"] = p.rejected;
  return j;
}

Json to_json(const AuditEntry& a) {
  return {{"instruction_id", a.instruction_id}, {"task", a.task}, {"reason", to_string(a.reason)},
          {"detail", a.detail}};
}

Json audit_json(const PairBuild& b) {
  Json dropped = Json::array();
  std::map<std::string, std::size_t> by_reason;
  for (const auto& a : b.audit) {
    dropped.push_back(to_json(a));
    ++by_reason[std::string(to_string(a.reason))];
  }
  return {{"n_groups", b.n_groups}, {"n_pairs", b.pairs.size()}, {"by_reason", by_reason}, {"dropped", dropped}};
}

namespace {

Sample sample_from_json(const Json& j, const char* key, std::size_t line) {
  if (!j.contains(key)) return {};
  try {
    Sample s = j.at(key).get<Sample>();
    for (double v : s)
      if (!std::isfinite(v)) throw ParseError(std::string("non-finite entry in '") + key + "'", line);
    return s;
  } catch (const Json::exception&) {
    throw ParseError(std::string("'") + key + "' must be a numeric array", line);
  }
}

}  // namespace

DpoPair dpo_pair_from_json(const Json& j, std::size_t line) {
  if (!j.is_object()) throw ParseError("pair record is not an object", line);
  DpoPair p;
  p.instruction_id = get_string(j, "instruction_id", line);
  p.task = j.value("task", "");
  p.chosen_ref = get_string(j, "chosen_ref", line);
  p.rejected_ref = get_string(j, "rejected_ref", line);
  p.chosen = sample_from_json(j, "chosen", line);
  p.rejected = sample_from_json(j, "rejected", line);
  p.chosen_overall = j.contains("chosen_overall") ? get_number(j, "chosen_overall", line) : 0.0;
  p.chosen_average = j.contains("chosen_average") ? get_number(j, "chosen_average", line) : 0.0;
  p.rejected_average = j.contains("rejected_average") ? get_number(j, "rejected_average", line) : 0.0;
  const std::string strategy = j.value("strategy", "self");
  if (strategy != "self" && strategy != "global") throw ParseError("unknown strategy '" + strategy + "'", line);
  p.strategy = strategy == "self" ? Strategy::kSelf : Strategy::kGlobal;
  return p;
}

std::vector<DpoPair> load_dpo_pairs(const std::filesystem::path& path) {
  std::vector<DpoPair> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t line) { out.push_back(dpo_pair_from_json(j, line)); });
  return out;
}

SeedGroup seed_group_from_json(const Json& j, std::size_t line) {
  if (!j.is_object()) throw ParseError("seed group is not an object", line);
  SeedGroup g;
  g.instruction_id = get_string(j, "instruction_id", line);
  g.task = j.value("task", "");
  if (!j.contains("variants") || !j["variants"].is_array()) throw ParseError("missing 'variants' array", line);
  for (const auto& v : j["variants"]) {
    Variant var;
    var.variant_id = get_string(v, "variant_id", line);
    var.sample = sample_from_json(v, "sample", line);
    var.features = sample_from_json(v, "features", line);
    if (v.contains("scores")) {
      try {
        var.scores = scorer::score_triple_from_json(v["scores"]);
      } catch (const ParseError& e) {
        throw ParseError(e.what(), line);
      }
    }
    g.variants.push_back(std::move(var));
  }
  return g;
}

std::vector<SeedGroup> load_seed_groups(const std::filesystem::path& path) {
  std::vector<SeedGroup> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t line) { out.push_back(seed_group_from_json(j, line)); });
  return out;
}

// --- flow matching ----------------------------------------------------------

Sample sample_xt(std::span<const double> x0, std::span<const double> eps, double t) {
  if (x0.size() != eps.size()) throw ValidationError("noise and sample differ in dimension");
  if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("t must lie in [0, 1]");
  Sample x(x0.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (1.0 - t) * x0[i] + t * eps[i];
  return x;
}

FlowModel::FlowModel(std::size_t dim, std::vector<std::size_t> hidden, std::uint64_t seed)
    : net_(Architecture{dim + 1, std::move(hidden), dim}) {
  Rng rng = Rng::substream(seed, "flow-init");
  params_ = net_.init_params(rng);
  reference_ = params_;
}

FlowModel::FlowModel(Architecture arch, std::vector<double> params, std::vector<double> reference)
    : net_(std::move(arch)), params_(std::move(params)), reference_(std::move(reference)) {
  if (net_.architecture().input_dim != net_.architecture().output_dim + 1)
    throw ValidationError("velocity network input must be the sample dimension plus one");
  if (params_.size() != net_.num_params() || reference_.size() != net_.num_params())
    throw ValidationError("parameter count does not match architecture");
}

Sample FlowModel::velocity(std::span<const double> params, std::span<const double> xt, double t) const {
  if (xt.size() != dim()) throw ValidationError("sample dimension does not match the velocity network");
  std::vector<double> in(xt.begin(), xt.end());
  in.push_back(t);
  MlpTape tape;
  net_.forward(params, in, tape);
  return tape.activations.back();
}

void FlowModel::save(const std::filesystem::path& path) const {
  Json j = {{"format", "prefedit.flowmodel"},
            {"version", 1},
            {"architecture", to_json(net_.architecture())},
            {"params", params_},
            {"reference", reference_}};
  write_text(path, j.dump() + "\n");
}

FlowModel FlowModel::load(const std::filesystem::path& path, const std::optional<Architecture>& expected) {
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "prefedit.flowmodel") throw ParseError("not a flow-model checkpoint");
  if (j.value("version", 0) != 1) throw ParseError("unsupported checkpoint version");
  Architecture arch = architecture_from_json(j.at("architecture"));
  if (expected && !(*expected == arch)) throw ValidationError("checkpoint architecture does not match");
  try {
    return FlowModel(std::move(arch), j.at("params").get<std::vector<double>>(),
                     j.at("reference").get<std::vector<double>>());
  } catch (const Json::exception& e) {
    throw ParseError(std::string("bad checkpoint: ") + e.what());
  }
}

void DpoConfig::validate() const {
  if (!(beta_g > 0.0) || !std::isfinite(beta_g)) throw ValidationError("beta_g must be positive");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ValidationError("DPO step size must be positive");
  if (batch_size == 0) throw ValidationError("DPO batch size must be positive");
}

namespace {

double sq_err(std::span<const double> target, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) s += (target[i] - v[i]) * (target[i] - v[i]);
  return s;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Adds coef * d/dθ ||target - v_θ(x_t, t)||^2 into grad and returns the squared error.
double accumulate_err_grad(const FlowModel& model, std::span<const double> params, std::span<const double> xt,
                           double t, std::span<const double> target, double coef, std::vector<double>& grad) {
  std::vector<double> in(xt.begin(), xt.end());
  in.push_back(t);
  MlpTape tape;
  model.net().forward(params, in, tape);
  const auto& v = tape.activations.back();
  std::vector<double> d_out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) d_out[i] = coef * -2.0 * (target[i] - v[i]);
  model.net().backward(params, tape, d_out, grad);
  return sq_err(target, v);
}

}  // namespace

double delta_theta(std::span<const double> x0, std::span<const double> eps, double t, const FlowModel& model,
                   std::span<const double> model_params, std::span<const double> reference_params, double beta_g) {
  const Sample xt = sample_xt(x0, eps, t);
  Sample target(x0.size());
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = eps[i] - x0[i];
  const Sample v = model.velocity(model_params, xt, t);
  const Sample vr = model.velocity(reference_params, xt, t);
  return beta_g * (sq_err(target, v) - sq_err(target, vr));
}

std::vector<PairDraw> draw_noise(std::size_t n_pairs, std::size_t dim, bool shared, Rng& rng) {
  std::vector<PairDraw> draws(n_pairs);
  for (auto& d : draws) {
    d.t = rng.uniform();
    d.eps_chosen.resize(dim);
    for (double& e : d.eps_chosen) e = rng.normal();
    if (shared) {
      d.eps_rejected = d.eps_chosen;
    } else {
      d.eps_rejected.resize(dim);
      for (double& e : d.eps_rejected) e = rng.normal();
    }
  }
  return draws;
}

DpoLoss dpo_loss(std::span<const DpoPair> pairs, const FlowModel& model, const std::vector<PairDraw>& draws,
                 const DpoConfig& config) {
  config.validate();
  if (pairs.empty()) throw ValidationError("DPO loss over an empty batch");
  if (draws.size() != pairs.size()) throw ValidationError("one noise draw per pair is required");
  const std::size_t d = model.dim();
  for (const auto& p : pairs)
    if (p.chosen.size() != d || p.rejected.size() != d)
      throw ValidationError("pair '" + p.instruction_id + "' sample dimension does not match the model");

  const auto params = model.params();
  const auto ref = model.reference();
  const double beta = config.beta_g;
  std::vector<double> margins(pairs.size());
  DpoLoss out;
  out.loss = detail::mean_samples(
      pairs.size(), model.net().num_params(), config.threads, out.grad, [&](std::size_t i, std::vector<double>& g) {
        const auto& p = pairs[i];
        const auto& dr = draws[i];
        auto member = [&](const Sample& x0, const Sample& eps, double coef, std::vector<double>* grad) {
          const Sample xt = sample_xt(x0, eps, dr.t);
          Sample target(d);
          for (std::size_t k = 0; k < d; ++k) target[k] = eps[k] - x0[k];
          const double ref_err = sq_err(target, model.velocity(ref, xt, dr.t));
          double err;
          if (grad) {
            err = accumulate_err_grad(model, params, xt, dr.t, target, coef, *grad);
          } else {
            err = sq_err(target, model.velocity(params, xt, dr.t));
          }
          return beta * (err - ref_err);
        };
        const double dc = member(p.chosen, dr.eps_chosen, 0.0, nullptr);
        const double drj = member(p.rejected, dr.eps_rejected, 0.0, nullptr);
        const double a = drj - dc;
        margins[i] = a;
        // d/dθ softplus(-a) = -sigmoid(-a) * (dΔr - dΔc)
        const double s = sigmoid(-a);
        member(p.chosen, dr.eps_chosen, s * beta, &g);
        member(p.rejected, dr.eps_rejected, -s * beta, &g);
        return softplus(-a);
      });
  const double inv_n = 1.0 / static_cast<double>(pairs.size());
  for (double& g : out.grad) g *= inv_n;
  out.mean_margin = std::accumulate(margins.begin(), margins.end(), 0.0) * inv_n;
  if (!std::isfinite(out.loss)) throw NumericError("DPO loss is not finite (mean margin " + fmt(out.mean_margin) + ")");
  return out;
}

DpoLoss dpo_loss(std::span<const DpoPair> pairs, const FlowModel& model, const DpoConfig& config, Rng& rng) {
  return dpo_loss(pairs, model, draw_noise(pairs.size(), model.dim(), config.shared_noise, rng), config);
}

DpoTrainResult train_dpo(std::span<const DpoPair> pairs, const FlowModel& model, const DpoConfig& config) {
  config.validate();
  DpoTrainResult res{model, {}, {}};
  if (config.epochs == 0) return res;
  if (pairs.empty()) throw ValidationError("no pairs to train on");
  Rng rng = Rng::substream(config.seed, "dpo-noise");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0, margin_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<DpoPair> batch;
      batch.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) batch.push_back(pairs[order[k]]);
      DpoLoss l;
      try {
        l = dpo_loss(batch, res.model, config, rng);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch at " + std::to_string(start) + ": " + e.what());
      }
      auto& p = res.model.mutable_params();
      for (std::size_t k = 0; k < p.size(); ++k) p[k] -= config.step_size * l.grad[k];
      loss_sum += l.loss * static_cast<double>(batch.size());
      margin_sum += l.mean_margin * static_cast<double>(batch.size());
    }
    res.epoch_losses.push_back(loss_sum / static_cast<double>(pairs.size()));
    res.epoch_margins.push_back(margin_sum / static_cast<double>(pairs.size()));
  }
  return res;
}

}  // namespace prefedit::dpo
