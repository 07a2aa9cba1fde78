// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "prefedit/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "prefedit/error.hpp"
#include "prefedit/jsonl.hpp"
#include "prefedit/random.hpp"

namespace prefedit::data {

std::string_view to_string(TaskGroup g) {
  switch (g) {
    case TaskGroup::kGlobalLevel: return "global-level";
    case TaskGroup::kObjectLevel: return "object-level";
    case TaskGroup::kHumanCentric: return "human-centric";
    case TaskGroup::kLowLevel: return "low-level";
  }
  return "unknown";
}

TaskGroup task_group_from_string(std::string_view s) {
  if (s == "global-level") return TaskGroup::kGlobalLevel;
  if (s == "object-level") return TaskGroup::kObjectLevel;
  if (s == "human-centric") return TaskGroup::kHumanCentric;
  if (s == "low-level") return TaskGroup::kLowLevel;
  throw ValidationError("unknown task group '" + std::string(s) + "'");
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "unknown";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

std::vector<PromptType> SourceItem::prompt_kinds() const {
  std::vector<PromptType> kinds;
  if (!prompt_instruction.empty()) kinds.push_back(PromptType::kInstruction);
  if (prompt_description && !prompt_description->empty()) kinds.push_back(PromptType::kDescription);
  return kinds;
}

const SourceItem* Manifest::find_source(std::string_view source_id) const {
  for (const auto& s : sources)
    if (s.source_id == source_id) return &s;
  return nullptr;
}

const EditedItem* Manifest::find_edition(std::string_view edited_id) const {
  for (const auto& e : editions)
    if (e.edited_id == edited_id) return &e;
  return nullptr;
}

const std::string& Manifest::task_of(std::string_view edited_id) const {
  const EditedItem* e = find_edition(edited_id);
  if (!e) throw IntegrityError("unknown edited_id '" + std::string(edited_id) + "'");
  const SourceItem* s = find_source(e->source_id);
  if (!s) throw IntegrityError("dangling source_id '" + e->source_id + "'");
  return s->task;
}

std::set<std::string> Manifest::model_ids() const {
  std::set<std::string> ids;
  for (const auto& e : editions) ids.insert(e.model_id);
  return ids;
}

std::map<std::string, std::vector<std::string>> Manifest::groups() const {
  std::map<std::string, std::vector<std::string>> g;
  for (const auto& e : editions) g[e.source_id].push_back(e.edited_id);
  for (auto& [_, members] : g) std::sort(members.begin(), members.end());
  return g;
}

const std::vector<TaskCategory>& default_taxonomy() {
  static const std::vector<TaskCategory> kTaxonomy = {
      {"style_transfer", TaskGroup::kGlobalLevel},
      {"color_adjustment", TaskGroup::kGlobalLevel},
      {"background_change", TaskGroup::kGlobalLevel},
      {"object_addition", TaskGroup::kObjectLevel},
      {"object_removal", TaskGroup::kObjectLevel},
      {"object_replacement", TaskGroup::kObjectLevel},
      {"attribute_modification", TaskGroup::kObjectLevel},
      {"object_relocation", TaskGroup::kObjectLevel},
      {"expression_change", TaskGroup::kHumanCentric},
      {"pose_adjustment", TaskGroup::kHumanCentric},
      {"denoising", TaskGroup::kLowLevel},
      {"deblurring", TaskGroup::kLowLevel},
      {"super_resolution", TaskGroup::kLowLevel},
      {"shadow_removal", TaskGroup::kLowLevel},
  };
  return kTaxonomy;
}

void validate(const Manifest& m) {
  std::set<std::string> task_names;
  for (const auto& t : m.taxonomy) {
    if (t.name.empty()) throw IntegrityError("task with empty name");
    if (!task_names.insert(t.name).second) throw IntegrityError("duplicate task '" + t.name + "'");
  }
  std::set<std::string> source_ids;
  for (const auto& s : m.sources) {
    if (s.source_id.empty()) throw IntegrityError("source with empty source_id");
    if (!source_ids.insert(s.source_id).second)
      throw IntegrityError("duplicate source_id '" + s.source_id + "'");
    if (s.prompt_kinds().empty()) throw IntegrityError("source '" + s.source_id + "' has no prompt");
    if (!task_names.count(s.task))
      throw IntegrityError("source '" + s.source_id + "' references unknown task '" + s.task + "'");
  }
  std::set<std::string> edited_ids;
  std::set<std::pair<std::string, std::string>> source_model;
  for (const auto& e : m.editions) {
    if (e.edited_id.empty()) throw IntegrityError("edition with empty edited_id");
    if (!edited_ids.insert(e.edited_id).second)
      throw IntegrityError("duplicate edited_id '" + e.edited_id + "'");
    if (!source_ids.count(e.source_id))
      throw IntegrityError("edition '" + e.edited_id + "' references unknown source_id '" + e.source_id + "'");
    if (!source_model.emplace(e.source_id, e.model_id).second)
      throw IntegrityError("duplicate (source_id, model_id) = ('" + e.source_id + "', '" + e.model_id + "')");
  }
  for (const auto& [id, _] : m.split)
    if (!edited_ids.count(id)) throw IntegrityError("split references unknown edited_id '" + id + "'");
  if (!m.split.empty() && m.split.size() != edited_ids.size())
    throw IntegrityError("split covers " + std::to_string(m.split.size()) + " of " +
                         std::to_string(edited_ids.size()) + " editions");
}

namespace {

template <typename F>
auto with_line(std::size_t line, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(e.what(), line);
  }
}

}  // namespace

Manifest parse_manifest(std::string_view text) {
  Manifest m;
  bool has_tasks = false;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), n);
    }
    if (!j.is_object()) throw ParseError("record is not an object", n);
    const std::string type = get_string(j, "type", n);
    if (type == "source") {
      SourceItem s;
      s.source_id = get_string(j, "source_id", n);
      s.prompt_instruction = j.value("prompt_instruction", "");
      if (j.contains("prompt_description") && !j["prompt_description"].is_null())
        s.prompt_description = get_string(j, "prompt_description", n);
      s.task = get_string(j, "task", n);
      s.image_ref = j.value("image_ref", "");
      m.sources.push_back(std::move(s));
    } else if (type == "edited") {
      EditedItem e;
      e.edited_id = get_string(j, "edited_id", n);
      e.source_id = get_string(j, "source_id", n);
      e.model_id = get_string(j, "model_id", n);
      e.image_ref = j.value("image_ref", "");
      m.editions.push_back(std::move(e));
    } else if (type == "task") {
      has_tasks = true;
      TaskCategory t;
      t.name = get_string(j, "name", n);
      t.group = with_line(n, [&] { return task_group_from_string(get_string(j, "group", n)); });
      m.taxonomy.push_back(std::move(t));
    } else if (type == "split") {
      const std::string id = get_string(j, "edited_id", n);
      const Split s = with_line(n, [&] { return split_from_string(get_string(j, "split", n)); });
      if (!m.split.emplace(id, s).second) throw IntegrityError("duplicate split for '" + id + "' (line " + std::to_string(n) + ")");
    } else {
      throw ParseError("unknown record type '" + type + "'", n);
    }
  }
  if (!has_tasks && !m.sources.empty()) m.taxonomy = default_taxonomy();
  validate(m);
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) { return parse_manifest(read_text(path)); }

std::string serialize_manifest(const Manifest& m) {
  std::string out;
  auto emit = [&](const Json& j) {
    out += j.dump();
    out += '\n';
  };
  for (const auto& t : m.taxonomy) emit({{"type", "task"}, {"name", t.name}, {"group", to_string(t.group)}});
  for (const auto& s : m.sources) {
    Json j = {{"type", "source"},
              {"source_id", s.source_id},
              {"prompt_instruction", s.prompt_instruction},
              {"task", s.task},
              {"image_ref", s.image_ref}};
    if (s.prompt_description) j["prompt_description"] = *s.prompt_description;
    emit(j);
  }
  for (const auto& e : m.editions)
    emit({{"type", "edited"},
          {"edited_id", e.edited_id},
          {"source_id", e.source_id},
          {"model_id", e.model_id},
          {"image_ref", e.image_ref}});
  for (const auto& [id, s] : m.split) emit({{"type", "split"}, {"edited_id", id}, {"split", to_string(s)}});
  return out;
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  write_text(path, serialize_manifest(m));
}

Manifest split_manifest(const Manifest& m, const SplitRatios& ratios, std::uint64_t seed) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw ValidationError("split ratios must be finite and non-negative");
    total += r;
  }
  if (total <= 0.0) throw ValidationError("split ratios sum to zero");

  std::vector<std::string> group_ids;
  for (const auto& [sid, _] : m.groups()) group_ids.push_back(sid);
  Rng rng = Rng::substream(seed, "split");
  rng.shuffle(group_ids);

  // Largest remainder: floor quotas, then hand leftovers to the largest fractions.
  const std::size_t g = group_ids.size();
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double quota = static_cast<double>(g) * ratios[k] / total;
    counts[k] = static_cast<std::size_t>(std::floor(quota));
    frac[k] = quota - std::floor(quota);
    assigned += counts[k];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; assigned < g; ++i, ++assigned) ++counts[order[i % 3]];

  std::map<std::string, Split> group_split;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t c = 0; c < counts[k]; ++c) group_split[group_ids[pos++]] = static_cast<Split>(k);

  Manifest out = m;
  out.split.clear();
  for (const auto& e : m.editions) out.split[e.edited_id] = group_split.at(e.source_id);
  return out;
}

Manifest filter_manifest(const Manifest& m, const ManifestFilter& filter) {
  if (filter.tasks) {
    std::set<std::string> known;
    for (const auto& t : m.taxonomy) known.insert(t.name);
    for (const auto& t : *filter.tasks)
      if (!known.count(t)) throw ValidationError("unknown task '" + t + "'");
  }
  if (filter.models) {
    const auto known = m.model_ids();
    for (const auto& id : *filter.models)
      if (!known.count(id)) throw ValidationError("unknown model '" + id + "'");
  }
  Manifest out;
  out.taxonomy = m.taxonomy;
  std::set<std::string> kept_sources;
  for (const auto& s : m.sources) {
    if (filter.tasks && !filter.tasks->count(s.task)) continue;
    kept_sources.insert(s.source_id);
    out.sources.push_back(s);
  }
  for (const auto& e : m.editions) {
    if (!kept_sources.count(e.source_id)) continue;
    if (filter.models && !filter.models->count(e.model_id)) continue;
    out.editions.push_back(e);
    if (auto it = m.split.find(e.edited_id); it != m.split.end()) out.split.insert(*it);
  }
  return out;
}

}  // namespace prefedit::data
