// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace prefedit {

using Json = nlohmann::json;

/// Calls `fn(record, line_number)` for every non-blank line of a JSONL file.
/// Throws ParseError with the 1-based line number on malformed JSON.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, std::size_t)>& fn);

std::vector<Json> read_jsonl(const std::filesystem::path& path);

/// Writes records one per line (compact form, trailing newline). Atomic via rename.
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Field accessors that turn nlohmann type errors into ParseError with context.
std::string get_string(const Json& j, const char* key, std::size_t line = 0);
double get_number(const Json& j, const char* key, std::size_t line = 0);

}  // namespace prefedit
