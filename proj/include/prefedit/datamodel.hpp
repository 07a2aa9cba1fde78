// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace prefedit::data {

enum class TaskGroup { kGlobalLevel, kObjectLevel, kHumanCentric, kLowLevel };

std::string_view to_string(TaskGroup g);
TaskGroup task_group_from_string(std::string_view s);

struct TaskCategory {
  std::string name;
  TaskGroup group = TaskGroup::kGlobalLevel;

  bool operator==(const TaskCategory&) const = default;
};

enum class PromptType { kInstruction, kDescription };

struct SourceItem {
  std::string source_id;
  std::string prompt_instruction;
  std::optional<std::string> prompt_description;
  std::string task;  // TaskCategory::name
  std::string image_ref;

  /// Prompt kinds present on this item (at least one for a valid item).
  std::vector<PromptType> prompt_kinds() const;

  bool operator==(const SourceItem&) const = default;
};

struct EditedItem {
  std::string edited_id;
  std::string source_id;
  std::string model_id;
  std::string image_ref;

  bool operator==(const EditedItem&) const = default;
};

enum class Split { kTrain, kVal, kTest };

std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

struct Manifest {
  std::vector<SourceItem> sources;
  std::vector<EditedItem> editions;
  std::vector<TaskCategory> taxonomy;
  std::map<std::string, Split> split;  // empty for unsplit manifests

  bool operator==(const Manifest&) const = default;

  const SourceItem* find_source(std::string_view source_id) const;
  const EditedItem* find_edition(std::string_view edited_id) const;
  /// Task name of an edited item's source.
  const std::string& task_of(std::string_view edited_id) const;
  std::set<std::string> model_ids() const;
  /// edited ids grouped by source id; groups and members sorted.
  std::map<std::string, std::vector<std::string>> groups() const;
};

/// Four-group default used when a manifest carries no "task" records.
/// The names are representative placeholders and are meant to be replaced
/// by a project-specific taxonomy section.
const std::vector<TaskCategory>& default_taxonomy();

/// Checks uniqueness and referential integrity. Throws IntegrityError.
void validate(const Manifest& m);

/// Reads a line-delimited manifest ("type": source | edited | task | split).
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(std::string_view text);

/// Canonical JSONL form: task, source, edited, split records in that order.
std::string serialize_manifest(const Manifest& m);
void save_manifest(const Manifest& m, const std::filesystem::path& path);

/// Per-split ratio weights (train, val, test).
using SplitRatios = std::array<double, 3>;

/// Assigns whole source groups to splits by largest-remainder counts over a
/// seeded shuffle of the group order.
Manifest split_manifest(const Manifest& m, const SplitRatios& ratios, std::uint64_t seed);

struct ManifestFilter {
  std::optional<std::set<std::string>> tasks;
  std::optional<std::set<std::string>> models;
};

Manifest filter_manifest(const Manifest& m, const ManifestFilter& filter);

}  // namespace prefedit::data
