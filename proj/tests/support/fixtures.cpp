// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <unistd.h>

namespace prefedit::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
  std::string tmpl = (fs::temp_directory_path() / "prefedit-test-XXXXXX").string();
  if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

// --- subjective --------------------------------------------------------------

std::vector<subjective::RawRanking> random_group_rankings(Rng& rng, const std::string& group, Dimension dim,
                                                          std::size_t m, std::size_t k) {
  std::vector<std::string> base;
  for (std::size_t i = 0; i < m; ++i) base.push_back(group + "-e" + std::to_string(i));
  rng.shuffle(base);
  std::vector<subjective::RawRanking> out;
  const std::size_t swaps = rng.below(m + 1);
  for (std::size_t a = 0; a < k; ++a) {
    auto order = base;
    for (std::size_t s = 0; s < swaps; ++s) {
      const std::size_t i = rng.below(m);
      const std::size_t j = rng.below(m);
      std::swap(order[i], order[j]);
    }
    out.push_back({"ann" + std::to_string(a), group, dim, std::move(order)});
  }
  return out;
}

SmallCampaign random_small_campaign(Rng& rng) {
  SmallCampaign c;
  const std::size_t n_img = 1 + rng.below(8);
  const std::size_t n_subj = 2 + rng.below(5);
  std::vector<double> bias(n_subj), spread(n_subj);
  for (std::size_t s = 0; s < n_subj; ++s) {
    bias[s] = rng.uniform(-0.8, 0.8);
    spread[s] = rng.uniform(0.3, 1.2);
  }
  const bool constant_subject = rng.uniform() < 0.15;
  for (std::size_t i = 0; i < n_img; ++i) {
    const std::string img = "img" + std::to_string(i);
    for (Dimension d : kAllDimensions) {
      const double truth = rng.uniform(1.5, 4.5);
      // With six raters one far-off rating can exceed two sample deviations.
      const bool plant = n_subj == 6 && rng.uniform() < 0.35;
      const std::size_t victim = rng.below(n_subj);
      for (std::size_t s = 0; s < n_subj; ++s) {
        if (!plant && rng.uniform() < 0.1) continue;
        double v;
        if (constant_subject && s == 0) {
          v = 3.0;
        } else if (plant) {
          v = s == victim ? (truth < 3.0 ? 5.0 : 1.0) : truth + rng.uniform(-0.05, 0.05);
        } else {
          v = truth + bias[s] + spread[s] * rng.normal() * 0.5;
        }
        v = std::clamp(v, 1.0, 5.0);
        c.ratings.push_back({"subj" + std::to_string(s), img, d, v});
      }
    }
  }
  rng.shuffle(c.ratings);

  const std::size_t n_groups = 1 + rng.below(3);
  for (std::size_t g = 0; g < n_groups; ++g) {
    const std::size_t m = 2 + rng.below(std::max<std::size_t>(n_img, 2) - 1);
    const std::size_t k = 1 + rng.below(6);
    for (Dimension d : kAllDimensions) {
      auto rs = random_group_rankings(rng, "grp" + std::to_string(g), d, m, k);
      c.rankings.insert(c.rankings.end(), rs.begin(), rs.end());
    }
  }
  return c;
}

// --- scorer --------------------------------------------------------------------

PlantedData planted_linear(const PlantedOptions& opt) {
  Rng rng(opt.seed);
  std::array<std::vector<double>, 3> w;
  for (auto& wd : w) {
    double norm = 0.0;
    for (std::size_t k = 0; k < opt.dim; ++k) {
      wd.push_back(rng.normal());
      norm += wd.back() * wd.back();
    }
    for (auto& v : wd) v /= std::sqrt(norm);
  }
  auto truth = [&](const std::vector<double>& x) {
    scorer::ScoreTriple t;
    for (Dimension d : kAllDimensions)
      t[d] = 50.0 + 15.0 * std::inner_product(x.begin(), x.end(), w[index_of(d)].begin(), 0.0);
    return t;
  };

  PlantedData out;
  out.manifest.taxonomy = {{"planted", data::TaskGroup::kGlobalLevel}};
  const std::size_t n_train_groups = opt.n_groups - opt.test_groups;
  for (std::size_t g = 0; g < opt.n_groups; ++g) {
    const bool test = g >= n_train_groups;
    const std::string src = "src" + std::to_string(g);
    out.manifest.sources.push_back({src, "edit " + src, std::nullopt, "planted", src + ".png"});
    std::vector<std::string> ids;
    std::vector<scorer::ScoreTriple> truths;
    std::vector<std::vector<double>> xs;
    for (std::size_t m = 0; m < opt.group_size; ++m) {
      const std::string id = src + "-m" + std::to_string(m);
      std::vector<double> x(opt.dim);
      for (auto& v : x) v = rng.normal();
      out.manifest.editions.push_back({id, src, "model" + std::to_string(m), id + ".png"});
      out.manifest.split[id] = test ? data::Split::kTest : data::Split::kTrain;
      out.features[id] = x;
      ids.push_back(id);
      truths.push_back(truth(x));
      xs.push_back(x);
    }
    if (test) {
      for (std::size_t m = 0; m < ids.size(); ++m)
        for (Dimension d : kAllDimensions) {
          subjective::MosRecord r;
          r.edited_id = ids[m];
          r.dimension = d;
          r.score = truths[m][d] + opt.test_noise * rng.normal();
          r.z_mean = r.score * 6.0 / 100.0 - 3.0;
          r.n_subjects = 15;
          out.test_mos.push_back(r);
        }
      for (Dimension d : kAllDimensions)
        for (std::size_t a = 0; a < ids.size(); ++a)
          for (std::size_t b = a + 1; b < ids.size(); ++b) {
            if (truths[a][d] == truths[b][d]) continue;
            const bool a_wins = truths[a][d] > truths[b][d];
            out.test_pairs.push_back({src, d, a_wins ? ids[a] : ids[b], a_wins ? ids[b] : ids[a], 1.0});
          }
      continue;
    }
    for (std::size_t m = 0; m < ids.size(); ++m) {
      if (rng.uniform() >= opt.label_fraction) continue;
      scorer::LabeledItem item{xs[m], {}};
      for (Dimension d : kAllDimensions) item.target[d] = truths[m][d] + opt.label_noise * rng.normal();
      out.train.items.push_back(std::move(item));
    }
    for (Dimension d : kAllDimensions) {
      // one noisy ranking of the group; positions give the rank gaps
      std::vector<double> observed;
      for (std::size_t m = 0; m < ids.size(); ++m) observed.push_back(truths[m][d] + opt.rank_noise * rng.normal());
      std::vector<std::size_t> order(ids.size());
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](auto a, auto b) { return observed[a] > observed[b]; });
      for (std::size_t i = 0; i < order.size(); ++i)
        for (std::size_t j = i + 1; j < order.size(); ++j)
          out.train.pairs.push_back({xs[order[i]], xs[order[j]], d, static_cast<double>(j - i)});
    }
  }
  data::validate(out.manifest);
  return out;
}

scorer::TrainData random_train_data(Rng& rng, std::size_t dim, std::size_t n_items, std::size_t n_pairs) {
  scorer::TrainData td;
  auto vec = [&] {
    std::vector<double> x(dim);
    for (auto& v : x) v = rng.normal();
    return x;
  };
  for (std::size_t i = 0; i < n_items; ++i) {
    scorer::LabeledItem it{vec(), {}};
    for (Dimension d : kAllDimensions) it.target[d] = rng.uniform(0.0, 100.0);
    td.items.push_back(std::move(it));
  }
  for (std::size_t i = 0; i < n_pairs; ++i)
    td.pairs.push_back({vec(), vec(), kAllDimensions[rng.below(3)], 1.0 + static_cast<double>(rng.below(4))});
  td.mapper = scorer::LevelMapper{0.0, 100.0};
  return td;
}

// --- dpo -------------------------------------------------------------------------

std::vector<dpo::DpoPair> constant_dpo_pairs(std::size_t n, const dpo::Sample& a, const dpo::Sample& b) {
  std::vector<dpo::DpoPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    dpo::DpoPair p;
    p.instruction_id = "ins" + std::to_string(i);
    p.task = "synthetic";
    p.chosen_ref = "A";
    p.rejected_ref = "B";
    p.chosen = a;
    p.rejected = b;
    out.push_back(std::move(p));
  }
  return out;
}

AuditFixture audit_fixture() {
  AuditFixture f;
  const std::vector<std::string> tasks = {"object_addition", "object_removal", "style_transfer", "denoising"};
  Rng rng(20260101);
  for (std::size_t g = 0; g < 40; ++g) {
    const std::string task = tasks[g % tasks.size()];
    const std::string id = "ins" + std::string(g < 10 ? "0" : "") + std::to_string(g);
    // distinct best overall per group; about a third fall below tau
    const double best = (g % 3 == 0) ? 30.0 + g * 0.5 : 60.0 + g * 0.75;
    dpo::SeedGroup sg{id, task, {}};
    const std::size_t n_var = 2 + g % 4;
    for (std::size_t v = 0; v < n_var; ++v) {
      const double s = v == 0 ? best : best - 5.0 - 3.0 * static_cast<double>(v) - rng.uniform(0.0, 1.0);
      dpo::Variant var;
      var.variant_id = id + "-v" + std::to_string(v);
      var.sample = {s / 100.0, 1.0 - s / 100.0};
      var.scores = {s, s, s};
      sg.variants.push_back(std::move(var));
    }
    rng.shuffle(sg.variants);
    f.best_overall[id] = best;
    if (best >= f.tau) f.above_by_task[task].push_back(id);
    f.groups.push_back(std::move(sg));
  }
  return f;
}

// --- annotation service --------------------------------------------------------

namespace {

annsvc::Task ranking_task(const std::string& id, std::size_t m) {
  annsvc::Task t;
  t.task_id = id;
  t.kind = annsvc::TaskKind::kRanking;
  t.group_id = id + "-src";
  t.source_ref = id + "-src.png";
  t.prompt = "make it brighter";
  for (std::size_t i = 0; i < m; ++i) {
    const std::string e = id + "-e" + std::to_string(i);
    t.members.push_back(e);
    t.image_refs[e] = e + ".png";
  }
  return t;
}

annsvc::Task scoring_task(const std::string& id, bool test) {
  annsvc::Task t;
  t.task_id = id;
  t.kind = annsvc::TaskKind::kScoring;
  t.group_id = id + "-src";
  t.source_ref = id + "-src.png";
  t.prompt = "remove the cup";
  t.members = {id + "-e"};
  t.image_refs[id + "-e"] = id + "-e.png";
  t.test_split = test;
  return t;
}

}  // namespace

annsvc::CampaignConfig small_campaign_config(std::size_t n_ranking, std::size_t n_scoring) {
  annsvc::CampaignConfig c;
  c.campaign_id = "camp";
  c.seed = 99;
  c.redundancy = {3, 5, 15};
  c.gold_count = 10;
  c.gold_threshold = 0.8;
  for (std::size_t i = 0; i < n_ranking; ++i) c.tasks.push_back(ranking_task("rank:g" + std::to_string(i), 4));
  for (std::size_t i = 0; i < n_scoring; ++i)
    c.tasks.push_back(scoring_task("score:e" + std::to_string(i), i % 3 == 0));
  for (std::size_t i = 0; i < 6; ++i) {
    annsvc::GoldTask g;
    g.task = ranking_task("gold:r" + std::to_string(i), 3);
    g.expected.dimension = kAllDimensions[i % 3];
    g.expected.winner = g.task.members[0];
    g.expected.loser = g.task.members[2];
    c.gold.push_back(std::move(g));
  }
  for (std::size_t i = 0; i < 6; ++i) {
    annsvc::GoldTask g;
    g.task = scoring_task("gold:s" + std::to_string(i), false);
    g.expected.dimension = kAllDimensions[i % 3];
    g.expected.lo = 4.0;
    g.expected.hi = 5.0;
    c.gold.push_back(std::move(g));
  }
  return c;
}

Json gold_body(const annsvc::GoldTask& gold, bool right) {
  Json body = Json::object();
  if (gold.task.kind == annsvc::TaskKind::kRanking) {
    auto order = gold.task.members;  // members[0] beats members[2]
    if (!right) std::reverse(order.begin(), order.end());
    for (Dimension d : kAllDimensions) body[std::string(to_string(d))] = order;
  } else {
    for (Dimension d : kAllDimensions) body[std::string(to_string(d))] = right ? 4.5 : 1.5;
  }
  return body;
}

Json valid_body(const annsvc::Task& task, std::uint64_t salt) {
  Json body = Json::object();
  if (task.kind == annsvc::TaskKind::kRanking) {
    auto order = task.members;
    std::rotate(order.begin(), order.begin() + static_cast<long>(salt % order.size()), order.end());
    for (Dimension d : kAllDimensions) body[std::string(to_string(d))] = order;
  } else {
    for (Dimension d : kAllDimensions)
      body[std::string(to_string(d))] = 1.0 + static_cast<double>((salt + index_of(d)) % 5);
  }
  return body;
}

}  // namespace prefedit::testing
