// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

// prefedit command-line driver. Each subcommand reads files, writes outputs
// under --out, and leaves a <subcommand>.report.json beside them.

#include <signal.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "prefedit/annsvc.hpp"
#include "prefedit/datamodel.hpp"
#include "prefedit/external_scorer.hpp"
#include "prefedit/metrics.hpp"
#include "prefedit/rewarddpo.hpp"
#include "prefedit/run_config.hpp"
#include "prefedit/scorer.hpp"
#include "prefedit/subjective.hpp"

namespace fs = std::filesystem;
using namespace prefedit;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kInvalid = 2, kNumeric = 3 };

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out = ".";
};

struct Args {
  std::string manifest, ratings, rankings, aggregated, pairs, mos, features, pred, checkpoint, external, init;
  std::string model_scores, groups, campaign, log, snapshot, loss, split, stages = "textual,pointwise,pairwise";
  std::string strategy = "self", host = "127.0.0.1";
  int port = 8080;
  double tolerance = 1e-4;
};

class Run {
 public:
  Run(std::string name, const Common& common) : out_(common.out) {
    if (!common.config_path.empty()) config_ = RunConfig::load(common.config_path);
    if (common.seed) config_.seed = *common.seed;
    if (common.threads) config_.threads = *common.threads;
    config_.validate();
    fs::create_directories(out_);
    report_ = std::make_unique<RunReport>(name, config_);
    name_ = std::move(name);
    if (!common.config_path.empty()) report_->add_input("config", common.config_path);
  }

  const RunConfig& config() const { return config_; }
  RunReport& report() { return *report_; }
  fs::path path(const std::string& file) const { return out_ / file; }

  void input(const std::string& name, const std::string& p) { report_->add_input(name, p); }

  void output_text(const std::string& name, const std::string& file, const std::string& text) {
    write_text(path(file), text);
    report_->add_output(name, path(file));
  }
  void output_jsonl(const std::string& name, const std::string& file, const std::vector<Json>& lines) {
    write_jsonl(path(file), lines);
    report_->add_output(name, path(file));
  }
  void output_json(const std::string& name, const std::string& file, const Json& j) {
    output_text(name, file, j.dump(2) + "\n");
  }

  void finish() { report_->write(path(name_ + ".report.json")); }

 private:
  fs::path out_;
  std::string name_;
  RunConfig config_;
  std::unique_ptr<RunReport> report_;
};

void need(const std::string& value, const char* flag) {
  if (value.empty()) throw ValidationError(std::string("missing required option ") + flag);
}

// Editions selected by --split; "all" (or an unsplit manifest) keeps everything.
std::set<std::string> select_split(const data::Manifest& m, const std::string& split) {
  std::set<std::string> ids;
  const bool all = split == "all" || m.split.empty();
  const std::optional<data::Split> want = all ? std::nullopt : std::optional(data::split_from_string(split));
  for (const auto& e : m.editions) {
    if (!want) {
      ids.insert(e.edited_id);
      continue;
    }
    auto it = m.split.find(e.edited_id);
    if (it != m.split.end() && it->second == *want) ids.insert(e.edited_id);
  }
  return ids;
}

std::map<std::string, scorer::ScoreTriple> load_predictions(const std::string& p) {
  std::map<std::string, scorer::ScoreTriple> out;
  for_each_jsonl(p, [&](const Json& j, std::size_t line) {
    const std::string id = get_string(j, "edited_id", line);
    try {
      out[id] = scorer::score_triple_from_json(j);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line);
    }
  });
  return out;
}

std::unique_ptr<scorer::Scorer> make_scorer(const Args& a, const RunConfig&, Run& run) {
  if (!a.checkpoint.empty()) {
    run.input("checkpoint", a.checkpoint);
    return std::make_unique<scorer::ToyNet>(scorer::ToyNet::load(a.checkpoint));
  }
  if (!a.external.empty()) {
    run.input("external", a.external);
    return std::make_unique<scorer::ExternalScorer>(
        scorer::external_config_from_json(Json::parse(read_text(a.external))));
  }
  if (!a.pred.empty()) {
    run.input("pred", a.pred);
    return std::make_unique<scorer::TableScorer>(load_predictions(a.pred));
  }
  throw ValidationError("one of --checkpoint, --external or --pred is required");
}

scorer::TrainData training_data(const std::set<std::string>& ids,
                                const std::map<std::string, std::vector<double>>& features,
                                const std::vector<subjective::MosRecord>& mos,
                                const std::vector<subjective::PreferencePair>& pairs) {
  scorer::TrainData data;
  const auto human = subjective::index_scores(mos);
  for (const auto& id : ids) {
    auto f = features.find(id);
    if (f == features.end()) continue;
    scorer::ScoreTriple t;
    bool complete = true;
    for (Dimension d : kAllDimensions) {
      auto it = human.find({id, d});
      if (it == human.end()) {
        complete = false;
        break;
      }
      t[d] = it->second;
    }
    if (complete) data.items.push_back({f->second, t});
  }
  for (const auto& p : pairs) {
    if (!ids.count(p.winner) || !ids.count(p.loser)) continue;
    auto w = features.find(p.winner), l = features.find(p.loser);
    if (w == features.end() || l == features.end()) continue;
    data.pairs.push_back({w->second, l->second, p.dimension, p.rank_gap});
  }
  return data;
}

Json metrics_json(const scorer::Evaluation& ev) {
  Json j = Json::object();
  for (const auto& [d, r] : ev.per_dimension) j[std::string(to_string(d))] = metrics::to_json(r);
  j["unscorable"] = ev.unscorable;
  return j;
}

// --- subcommands ---------------------------------------------------------------

void cmd_ingest(Run& run, const Args& a) {
  need(a.manifest, "--manifest");
  run.input("manifest", a.manifest);
  const data::Manifest m = data::load_manifest(a.manifest);
  run.output_text("manifest", "manifest.jsonl", data::serialize_manifest(m));
  run.report().counts() = {{"sources", m.sources.size()},
                           {"editions", m.editions.size()},
                           {"tasks", m.taxonomy.size()},
                           {"models", m.model_ids().size()}};
}

void cmd_split(Run& run, const Args& a) {
  need(a.manifest, "--manifest");
  run.input("manifest", a.manifest);
  const data::Manifest m = data::split_manifest(data::load_manifest(a.manifest), run.config().split_ratios,
                                                run.config().seed);
  run.output_text("manifest", "manifest.split.jsonl", data::serialize_manifest(m));
  std::map<std::string, std::size_t> per;
  for (const auto& [_, s] : m.split) ++per[std::string(data::to_string(s))];
  run.report().counts() = per;
}

void cmd_process_scores(Run& run, const Args& a) {
  need(a.ratings, "--ratings");
  run.input("ratings", a.ratings);
  const auto res = subjective::process_scores(subjective::load_ratings(a.ratings));
  run.output_jsonl("mos", "mos.jsonl", subjective::to_json_lines(res.mos));
  run.output_json("score_report", "score_report.json", subjective::to_json(res.report));
  run.report().counts() = {{"ratings", res.report.n_ratings},
                           {"outliers", res.report.n_outliers},
                           {"removed_subjects", res.report.removed_subjects.size()},
                           {"mos", res.report.n_mos}};
}

void cmd_process_rankings(Run& run, const Args& a) {
  need(a.rankings, "--rankings");
  run.input("rankings", a.rankings);
  const auto res =
      subjective::process_rankings(subjective::load_rankings(a.rankings), run.config().concordance_threshold);
  run.output_jsonl("aggregated", "aggregated.jsonl", subjective::to_json_lines(res.aggregated));
  run.output_jsonl("pairs", "pairs.jsonl", subjective::to_json_lines(res.pairs));
  run.output_json("ranking_report", "ranking_report.json", subjective::to_json(res.report));
  run.report().counts() = {{"groups", res.report.n_groups},
                           {"pairs", res.report.n_pairs},
                           {"skipped_ties", res.report.skipped_ties},
                           {"flagged", res.report.flagged_for_reannotation.size()}};
}

void cmd_make_pairs(Run& run, const Args& a) {
  need(a.aggregated, "--aggregated");
  run.input("aggregated", a.aggregated);
  std::vector<subjective::PreferencePair> pairs;
  std::size_t ties = 0;
  for (const auto& agg : subjective::load_aggregated(a.aggregated)) {
    auto r = subjective::rankings_to_pairs(agg);
    ties += r.skipped_ties;
    pairs.insert(pairs.end(), r.pairs.begin(), r.pairs.end());
  }
  run.output_jsonl("pairs", "pairs.jsonl", subjective::to_json_lines(pairs));
  run.report().counts() = {{"pairs", pairs.size()}, {"skipped_ties", ties}};
}

void cmd_consistency_check(Run& run, const Args& a) {
  need(a.pairs, "--pairs");
  need(a.mos, "--mos");
  run.input("pairs", a.pairs);
  run.input("mos", a.mos);
  const auto pairs = subjective::load_pairs(a.pairs);
  const auto rejected =
      subjective::check_pair_score_consistency(pairs, subjective::index_scores(subjective::load_mos(a.mos)));
  std::vector<subjective::PreferencePair> kept;
  for (const auto& p : pairs)
    if (std::find(rejected.begin(), rejected.end(), p) == rejected.end()) kept.push_back(p);
  run.output_jsonl("pairs", "pairs.consistent.jsonl", subjective::to_json_lines(kept));
  run.output_jsonl("rejected", "pairs.rejected.jsonl", subjective::to_json_lines(rejected));
  run.report().counts() = {{"pairs", pairs.size()}, {"kept", kept.size()}, {"rejected", rejected.size()}};
}

void cmd_metrics(Run& run, const Args& a) {
  need(a.pred, "--pred");
  need(a.mos, "--mos");
  need(a.manifest, "--manifest");
  run.input("pred", a.pred);
  run.input("mos", a.mos);
  run.input("manifest", a.manifest);
  std::vector<subjective::PreferencePair> pairs;
  if (!a.pairs.empty()) {
    run.input("pairs", a.pairs);
    pairs = subjective::load_pairs(a.pairs);
  }
  const scorer::TableScorer table(load_predictions(a.pred));
  const auto ev = scorer::evaluate(table, data::load_manifest(a.manifest), {}, subjective::load_mos(a.mos), pairs);
  run.output_json("metrics", "metrics.json", metrics_json(ev));
  run.report().counts() = {{"unscorable", ev.unscorable.size()}};
}

void cmd_leaderboard(Run& run, const Args& a) {
  std::vector<metrics::LeaderboardRow> rows;
  if (!a.model_scores.empty()) {
    run.input("model_scores", a.model_scores);
    std::map<std::string, metrics::DimensionScores> per_model;
    for_each_jsonl(a.model_scores, [&](const Json& j, std::size_t line) {
      const std::string id = get_string(j, "model_id", line);
      per_model[id] = {get_number(j, "quality", line), get_number(j, "alignment", line),
                       get_number(j, "preservation", line)};
    });
    rows = metrics::build_leaderboard(per_model, run.config().weights);
  } else {
    need(a.aggregated, "--aggregated or --model-scores");
    need(a.manifest, "--manifest");
    run.input("aggregated", a.aggregated);
    run.input("manifest", a.manifest);
    rows = metrics::build_leaderboard(subjective::load_aggregated(a.aggregated), data::load_manifest(a.manifest),
                                      run.config().weights);
  }
  run.output_text("leaderboard", "leaderboard.csv", metrics::leaderboard_csv(rows));
  std::size_t tied = 0;
  for (const auto& r : rows) tied += r.tied;
  run.report().counts() = {{"models", rows.size()}, {"tied", tied}};
}

void cmd_task_scores(Run& run, const Args& a) {
  need(a.mos, "--mos");
  need(a.manifest, "--manifest");
  run.input("mos", a.mos);
  run.input("manifest", a.manifest);
  const auto ts = metrics::task_scores(subjective::load_mos(a.mos), data::load_manifest(a.manifest));
  run.output_text("task_scores", "task_scores.csv", metrics::task_scores_csv(ts));
  run.report().counts() = {{"rows", ts.mean.size()}, {"empty_tasks", ts.empty_tasks.size()}};
  run.report().extra()["empty_tasks"] = ts.empty_tasks;
}

void cmd_train_scorer(Run& run, const Args& a) {
  need(a.manifest, "--manifest");
  need(a.features, "--features");
  need(a.mos, "--mos");
  run.input("manifest", a.manifest);
  run.input("features", a.features);
  run.input("mos", a.mos);
  const data::Manifest m = data::load_manifest(a.manifest);
  const auto features = scorer::load_features(a.features);
  std::vector<subjective::PreferencePair> pairs;
  if (!a.pairs.empty()) {
    run.input("pairs", a.pairs);
    pairs = subjective::load_pairs(a.pairs);
  }
  const std::string split = a.split.empty() ? "train" : a.split;
  const auto data = training_data(select_split(m, split), features, subjective::load_mos(a.mos), pairs);
  if (features.empty()) throw ValidationError("feature file is empty");

  scorer::ToyNet net = [&] {
    if (!a.init.empty()) {
      run.input("init", a.init);
      return scorer::ToyNet::load(a.init);
    }
    return scorer::ToyNet::random(features.begin()->second.size(), run.config().scorer_hidden, run.config().seed);
  }();

  std::vector<scorer::Stage> stages;
  std::stringstream ss(a.stages);
  for (std::string s; std::getline(ss, s, ',');) stages.push_back(scorer::stage_from_string(s));
  Json curves = Json::object();
  std::vector<std::size_t> phases;
  for (scorer::Stage s : stages) {
    try {
      auto r = scorer::train(net, s, data, run.config().scorer_config());
      net = std::move(r.net);
      curves[std::string(to_string(s))] = r.epoch_losses;
      if (!r.phase_sizes.empty()) phases = r.phase_sizes;
    } catch (const scorer::DivergenceError& e) {
      e.last_good().save(run.path("scorer.last_good.json"));
      throw;
    }
  }
  net.save(run.path("scorer.json"));
  run.report().add_output("checkpoint", run.path("scorer.json"));
  run.report().counts() = {{"items", data.items.size()}, {"pairs", data.pairs.size()}};
  run.report().extra()["epoch_losses"] = curves;
  run.report().extra()["curriculum_phase_sizes"] = phases;
  run.report().extra()["split"] = split;
}

void cmd_grad_check(Run& run, const Args& a) {
  need(a.loss, "--loss");
  need(a.features, "--features");
  run.input("features", a.features);
  const auto features = scorer::load_features(a.features);
  if (features.empty()) throw ValidationError("feature file is empty");
  std::vector<subjective::MosRecord> mos;
  std::vector<subjective::PreferencePair> pairs;
  if (!a.mos.empty()) {
    run.input("mos", a.mos);
    mos = subjective::load_mos(a.mos);
  }
  if (!a.pairs.empty()) {
    run.input("pairs", a.pairs);
    pairs = subjective::load_pairs(a.pairs);
  }
  std::set<std::string> ids;
  for (const auto& [id, _] : features) ids.insert(id);
  const auto data = training_data(ids, features, mos, pairs);
  const scorer::ToyNet net = a.checkpoint.empty()
                                 ? scorer::ToyNet::random(features.begin()->second.size(),
                                                          run.config().scorer_hidden, run.config().seed)
                                 : scorer::ToyNet::load(a.checkpoint);
  const double err = scorer::grad_check(net, scorer::loss_kind_from_string(a.loss), data);
  std::cout << "max relative error " << err << "\n";
  run.report().extra()["max_relative_error"] = err;
  run.report().extra()["tolerance"] = a.tolerance;
  run.report().counts() = {{"items", data.items.size()}, {"pairs", data.pairs.size()}};
  if (!(err <= a.tolerance)) {
    run.finish();
    throw NumericError("gradient check failed: " + std::to_string(err) + " > " + std::to_string(a.tolerance));
  }
}

void cmd_score(Run& run, const Args& a) {
  need(a.manifest, "--manifest");
  run.input("manifest", a.manifest);
  const data::Manifest m = data::load_manifest(a.manifest);
  std::map<std::string, std::vector<double>> features;
  if (!a.features.empty()) {
    run.input("features", a.features);
    features = scorer::load_features(a.features);
  }
  const auto backend = make_scorer(a, run.config(), run);
  const auto ids = select_split(m, a.split.empty() ? "all" : a.split);
  std::vector<Json> lines;
  for (const auto& id : ids) {
    Json j = scorer::to_json(backend->predict(scorer::make_item(m, id, features)));
    j["edited_id"] = id;
    lines.push_back(std::move(j));
  }
  run.output_jsonl("scores", "scores.jsonl", lines);
  run.report().counts() = {{"scored", lines.size()}};
  run.report().extra()["backend"] = backend->kind();
}

void cmd_evaluate(Run& run, const Args& a) {
  need(a.manifest, "--manifest");
  need(a.mos, "--mos");
  run.input("manifest", a.manifest);
  run.input("mos", a.mos);
  data::Manifest m = data::load_manifest(a.manifest);
  std::map<std::string, std::vector<double>> features;
  if (!a.features.empty()) {
    run.input("features", a.features);
    features = scorer::load_features(a.features);
  }
  std::vector<subjective::PreferencePair> pairs;
  if (!a.pairs.empty()) {
    run.input("pairs", a.pairs);
    pairs = subjective::load_pairs(a.pairs);
  }
  const std::string split = a.split.empty() ? "test" : a.split;
  const auto keep = select_split(m, split);
  std::erase_if(m.editions, [&](const data::EditedItem& e) { return !keep.count(e.edited_id); });
  const auto backend = make_scorer(a, run.config(), run);
  const auto ev = scorer::evaluate(*backend, m, features, subjective::load_mos(a.mos), pairs);
  run.output_json("evaluation", "evaluation.json", metrics_json(ev));
  run.report().counts() = {{"editions", m.editions.size()}, {"unscorable", ev.unscorable.size()}};
  run.report().extra()["split"] = split;
  run.report().extra()["backend"] = backend->kind();
}

void cmd_build_dpo_pairs(Run& run, const Args& a) {
  dpo::PairBuild build;
  if (a.strategy == "self") {
    need(a.groups, "--groups");
    run.input("groups", a.groups);
    auto groups = dpo::load_seed_groups(a.groups);
    if (!a.checkpoint.empty() || !a.external.empty()) {
      const auto backend = make_scorer(a, run.config(), run);
      for (auto& g : groups)
        for (auto& v : g.variants) {
          scorer::ScoringItem item;
          item.edited_id = v.variant_id;
          item.features = v.features;
          v.scores = backend->predict(item);
        }
    }
    build = dpo::build_self_pairs(groups, run.config().pair_config());
  } else if (a.strategy == "global") {
    need(a.aggregated, "--aggregated");
    need(a.mos, "--mos");
    need(a.manifest, "--manifest");
    run.input("aggregated", a.aggregated);
    run.input("mos", a.mos);
    run.input("manifest", a.manifest);
    build = dpo::build_global_pairs(subjective::load_aggregated(a.aggregated), subjective::load_mos(a.mos),
                                    data::load_manifest(a.manifest), run.config().pair_config());
  } else {
    throw ValidationError("--strategy must be self or global");
  }
  std::vector<Json> lines;
  for (const auto& p : build.pairs) lines.push_back(dpo::to_json(p));
  run.output_jsonl("pairs", "dpo_pairs.jsonl", lines);
  Json audit = dpo::audit_json(build);
  audit["low_quality_threshold"] = run.config().low_quality_threshold;
  audit["strategy"] = a.strategy;
  run.output_json("audit", "dpo_audit.json", audit);
  run.report().counts() = {{"groups", build.n_groups}, {"pairs", build.pairs.size()}, {"dropped", build.audit.size()}};
}

void cmd_train_dpo(Run& run, const Args& a) {
  need(a.pairs, "--pairs");
  run.input("pairs", a.pairs);
  const auto pairs = dpo::load_dpo_pairs(a.pairs);
  const dpo::FlowModel model = [&] {
    if (!a.init.empty()) {
      run.input("init", a.init);
      return dpo::FlowModel::load(a.init);
    }
    return dpo::FlowModel(run.config().dpo_dim, run.config().dpo_hidden, run.config().seed);
  }();
  const auto res = dpo::train_dpo(pairs, model, run.config().dpo_config());
  res.model.save(run.path("flow_model.json"));
  run.report().add_output("checkpoint", run.path("flow_model.json"));
  run.report().counts() = {{"pairs", pairs.size()}, {"epochs", res.epoch_losses.size()}};
  run.report().extra()["epoch_losses"] = res.epoch_losses;
  run.report().extra()["epoch_margins"] = res.epoch_margins;
}

void cmd_serve(Run& run, const Args& a) {
  need(a.campaign, "--campaign");
  need(a.log, "--log");
  run.input("campaign", a.campaign);
  annsvc::CampaignConfig cfg = annsvc::load_campaign(a.campaign);
  std::optional<fs::path> snap;
  if (!a.snapshot.empty()) snap = a.snapshot;

  // Signals go to a waiter thread; the server threads never see them.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  annsvc::Campaign campaign(std::move(cfg), a.log, snap);
  annsvc::HttpServer server(campaign);
  const int port = server.bind(a.host, a.port);
  std::cout << "listening on " << a.host << ":" << port << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  server.listen();
  waiter.detach();
  if (snap) campaign.write_snapshot();
  run.report().counts() = campaign.progress();
  run.report().extra()["port"] = port;
}

void cmd_export_campaign(Run& run, const Args& a) {
  need(a.campaign, "--campaign");
  need(a.log, "--log");
  run.input("campaign", a.campaign);
  run.input("log", a.log);
  const annsvc::CampaignConfig cfg = annsvc::load_campaign(a.campaign);
  annsvc::CampaignState state(&cfg);
  for (const auto& e : annsvc::ResponseLog::read(a.log)) state.apply(e);
  const auto ex = annsvc::export_raw(state);
  run.output_text("ratings", "ratings.jsonl", ex.ratings);
  run.output_text("rankings", "rankings.jsonl", ex.rankings);
  run.report().counts() = {{"events", state.event_count()}, {"responses", state.responses().size()}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prefedit: preference feedback toolkit for image-editing evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  Args a;
  app.add_option("--config", common.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", common.seed, "root seed (overrides the config file)");
  app.add_option("--threads", common.threads, "worker cap; results do not depend on it");
  app.add_option("--out", common.out, "output directory")->capture_default_str();

  struct Spec {
    const char* name;
    const char* help;
    void (*fn)(Run&, const Args&);
  };
  const std::vector<Spec> specs = {
      {"ingest", "validate a manifest and write its canonical form", cmd_ingest},
      {"split", "assign source groups to train/val/test", cmd_split},
      {"process-scores", "outliers, subject screening, z-scores and MOS", cmd_process_scores},
      {"process-rankings", "aggregate group rankings and emit pairs", cmd_process_rankings},
      {"make-pairs", "pairs from aggregated rankings", cmd_make_pairs},
      {"consistency-check", "drop pairs that contradict MOS", cmd_consistency_check},
      {"metrics", "SRCC/PLCC/group SRCC/Acc of a prediction file", cmd_metrics},
      {"leaderboard", "model ranking scores and overall score", cmd_leaderboard},
      {"task-scores", "mean MOS per task and model", cmd_task_scores},
      {"train-scorer", "train the toy scorer", cmd_train_scorer},
      {"grad-check", "finite-difference check of a scorer loss", cmd_grad_check},
      {"score", "score editions with a backend", cmd_score},
      {"evaluate", "score and compute metrics on a split", cmd_evaluate},
      {"build-dpo-pairs", "chosen/rejected pairs with audit", cmd_build_dpo_pairs},
      {"train-dpo", "flow-matching DPO on a toy velocity net", cmd_train_dpo},
      {"serve", "run the annotation HTTP service", cmd_serve},
      {"export-campaign", "raw ratings and rankings from a campaign log", cmd_export_campaign},
  };
  std::map<CLI::App*, const Spec*> dispatch;
  for (const auto& s : specs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    dispatch[sub] = &s;
    const std::string n = s.name;
    auto opt = [&](const char* flag, std::string& dst, const char* help) { sub->add_option(flag, dst, help); };
    if (n == "ingest" || n == "split" || n == "metrics" || n == "task-scores" || n == "train-scorer" ||
        n == "score" || n == "evaluate" || n == "leaderboard" || n == "build-dpo-pairs")
      opt("--manifest", a.manifest, "manifest JSONL");
    if (n == "process-scores") opt("--ratings", a.ratings, "raw ratings JSONL");
    if (n == "process-rankings") opt("--rankings", a.rankings, "raw rankings JSONL");
    if (n == "make-pairs" || n == "leaderboard" || n == "build-dpo-pairs")
      opt("--aggregated", a.aggregated, "aggregated rankings JSONL");
    if (n == "consistency-check" || n == "metrics" || n == "train-scorer" || n == "grad-check" ||
        n == "evaluate" || n == "train-dpo")
      opt("--pairs", a.pairs, "pairs JSONL");
    if (n == "consistency-check" || n == "metrics" || n == "task-scores" || n == "train-scorer" ||
        n == "grad-check" || n == "evaluate" || n == "build-dpo-pairs")
      opt("--mos", a.mos, "MOS JSONL");
    if (n == "train-scorer" || n == "grad-check" || n == "score" || n == "evaluate")
      opt("--features", a.features, "features JSONL");
    if (n == "metrics" || n == "score" || n == "evaluate") opt("--pred", a.pred, "predicted scores JSONL");
    if (n == "grad-check" || n == "score" || n == "evaluate" || n == "build-dpo-pairs")
      opt("--checkpoint", a.checkpoint, "toy scorer checkpoint");
    if (n == "score" || n == "evaluate" || n == "build-dpo-pairs")
      opt("--external", a.external, "external scorer config JSON");
    if (n == "train-scorer" || n == "train-dpo") opt("--init", a.init, "starting checkpoint");
    if (n == "train-scorer" || n == "score" || n == "evaluate") opt("--split", a.split, "train|val|test|all");
    if (n == "train-scorer") opt("--stages", a.stages, "comma list of textual,pointwise,pairwise");
    if (n == "grad-check") {
      opt("--loss", a.loss, "ce|mse|pairwise");
      sub->add_option("--tolerance", a.tolerance, "maximum relative error");
    }
    if (n == "leaderboard") opt("--model-scores", a.model_scores, "per-model dimension scores JSONL");
    if (n == "build-dpo-pairs") {
      opt("--strategy", a.strategy, "self|global");
      opt("--groups", a.groups, "seed groups JSONL");
    }
    if (n == "serve" || n == "export-campaign") {
      opt("--campaign", a.campaign, "campaign config JSON");
      opt("--log", a.log, "event log JSONL");
    }
    if (n == "serve") {
      opt("--snapshot", a.snapshot, "snapshot file");
      opt("--host", a.host, "bind address");
      sub->add_option("--port", a.port, "port (0 picks one)");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  const Spec* spec = nullptr;
  for (CLI::App* sub : app.get_subcommands()) spec = dispatch.at(sub);
  try {
    Run run(spec->name, common);
    run.report().extra()["argv"] = std::vector<std::string>(argv, argv + argc);
    spec->fn(run, a);
    run.finish();
    return kOk;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  }
}
