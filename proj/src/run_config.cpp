// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "prefedit/run_config.hpp"

#include <cmath>
#include <set>

#include "prefedit/hash.hpp"

namespace prefedit {

namespace {

void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& [k, _] : j.items())
    if (!allowed.count(k)) throw ValidationError("unknown config key '" + where + "." + k + "'");
}

template <typename T>
void take(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ValidationError("config key '" + where + "." + key + "' has the wrong type");
  }
}

}  // namespace

scorer::TrainConfig RunConfig::scorer_config() const {
  scorer::TrainConfig c = scorer_train;
  c.seed = seed;
  c.threads = threads;
  return c;
}

dpo::DpoConfig RunConfig::dpo_config() const {
  dpo::DpoConfig c = dpo;
  c.seed = seed;
  c.threads = threads;
  return c;
}

void RunConfig::validate() const {
  if (threads == 0) throw ValidationError("threads must be at least 1");
  if (outlier_sigmas != 2.0) throw ValidationError("outlier_sigmas is fixed at 2");
  if (subject_removal_fraction != 0.05) throw ValidationError("subject_removal_fraction is fixed at 0.05");
  if (!(concordance_threshold > 0.0 && concordance_threshold <= 1.0))
    throw ValidationError("concordance_threshold must lie in (0, 1]");
  if (!(gold_threshold >= 0.0 && gold_threshold <= 1.0)) throw ValidationError("gold_threshold must lie in [0, 1]");
  if (!std::isfinite(low_quality_threshold)) throw ValidationError("low_quality_threshold must be finite");
  double total = 0.0;
  for (double r : split_ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw ValidationError("split ratios must be non-negative");
    total += r;
  }
  if (!(total > 0.0)) throw ValidationError("split ratios must not all be zero");
  weights.validate();
  if (!(scorer_train.step_size > 0.0)) throw ValidationError("scorer step_size must be positive");
  if (scorer_train.batch_size == 0) throw ValidationError("scorer batch_size must be positive");
  for (auto h : scorer_hidden)
    if (h == 0) throw ValidationError("scorer hidden widths must be positive");
  if (dpo_dim == 0) throw ValidationError("dpo dim must be positive");
  for (auto h : dpo_hidden)
    if (h == 0) throw ValidationError("dpo hidden widths must be positive");
  dpo.validate();
}

void RunConfig::merge(const Json& j) {
  check_keys(j,
             {"seed", "threads", "outlier_sigmas", "subject_removal_fraction", "concordance_threshold",
              "gold_threshold", "low_quality_threshold", "split_ratios", "weights", "scorer", "dpo"},
             "config");
  take(j, "seed", seed, "config");
  take(j, "threads", threads, "config");
  take(j, "outlier_sigmas", outlier_sigmas, "config");
  take(j, "subject_removal_fraction", subject_removal_fraction, "config");
  take(j, "concordance_threshold", concordance_threshold, "config");
  take(j, "gold_threshold", gold_threshold, "config");
  take(j, "low_quality_threshold", low_quality_threshold, "config");
  take(j, "split_ratios", split_ratios, "config");
  if (j.contains("weights")) {
    const Json& w = j["weights"];
    check_keys(w, {"quality", "alignment", "preservation"}, "weights");
    take(w, "quality", weights.quality, "weights");
    take(w, "alignment", weights.alignment, "weights");
    take(w, "preservation", weights.preservation, "weights");
  }
  if (j.contains("scorer")) {
    const Json& s = j["scorer"];
    check_keys(s, {"hidden", "step_size", "epochs", "batch_size"}, "scorer");
    take(s, "hidden", scorer_hidden, "scorer");
    take(s, "step_size", scorer_train.step_size, "scorer");
    take(s, "epochs", scorer_train.epochs, "scorer");
    take(s, "batch_size", scorer_train.batch_size, "scorer");
  }
  if (j.contains("dpo")) {
    const Json& d = j["dpo"];
    check_keys(d, {"dim", "hidden", "beta_g", "step_size", "epochs", "batch_size", "shared_noise"}, "dpo");
    take(d, "dim", dpo_dim, "dpo");
    take(d, "hidden", dpo_hidden, "dpo");
    take(d, "beta_g", dpo.beta_g, "dpo");
    take(d, "step_size", dpo.step_size, "dpo");
    take(d, "epochs", dpo.epochs, "dpo");
    take(d, "batch_size", dpo.batch_size, "dpo");
    take(d, "shared_noise", dpo.shared_noise, "dpo");
  }
}

Json RunConfig::to_json() const {
  return {{"seed", seed},
          {"threads", threads},
          {"outlier_sigmas", outlier_sigmas},
          {"subject_removal_fraction", subject_removal_fraction},
          {"concordance_threshold", concordance_threshold},
          {"gold_threshold", gold_threshold},
          {"low_quality_threshold", low_quality_threshold},
          {"split_ratios", split_ratios},
          {"weights",
           {{"quality", weights.quality}, {"alignment", weights.alignment}, {"preservation", weights.preservation}}},
          {"scorer",
           {{"hidden", scorer_hidden},
            {"step_size", scorer_train.step_size},
            {"epochs", scorer_train.epochs},
            {"batch_size", scorer_train.batch_size}}},
          {"dpo",
           {{"dim", dpo_dim},
            {"hidden", dpo_hidden},
            {"beta_g", dpo.beta_g},
            {"step_size", dpo.step_size},
            {"epochs", dpo.epochs},
            {"batch_size", dpo.batch_size},
            {"shared_noise", dpo.shared_noise}}}};
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
  RunConfig c;
  c.merge(j);
  c.validate();
  return c;
}

RunReport::RunReport(std::string subcommand, const RunConfig& config)
    : subcommand_(std::move(subcommand)), config_(config.to_json()) {}

void RunReport::add_input(const std::string& name, const std::filesystem::path& path) {
  inputs_[name] = {{"path", path.string()}, {"sha256", sha256_file(path)}};
}

void RunReport::add_output(const std::string& name, const std::filesystem::path& path) {
  outputs_[name] = {{"path", path.string()}, {"sha256", sha256_file(path)}};
}

Json RunReport::to_json() const {
  return {{"schema_version", kSchemaVersion}, {"subcommand", subcommand_}, {"config", config_},
          {"inputs", inputs_},                {"outputs", outputs_},       {"counts", counts_},
          {"extra", extra_}};
}

void RunReport::write(const std::filesystem::path& path) const { write_text(path, to_json().dump(2) + "\n"); }

}  // namespace prefedit
