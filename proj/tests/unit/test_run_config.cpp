// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "prefedit/error.hpp"
#include "prefedit/hash.hpp"
#include "prefedit/jsonl.hpp"
#include "prefedit/run_config.hpp"

namespace prefedit {
namespace {

TEST(RunConfig, DefaultsAreValid) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.to_json()["weights"]["alignment"], 0.4);
}

TEST(RunConfig, MergeOverlaysOnlyGivenKeys) {
  RunConfig c;
  c.merge(Json::parse(R"({"seed": 12, "threads": 3, "dpo": {"beta_g": 2.5}, "scorer": {"hidden": [4, 4]}})"));
  EXPECT_EQ(c.seed, 12u);
  EXPECT_EQ(c.dpo.beta_g, 2.5);
  EXPECT_EQ(c.dpo.epochs, 50u);
  EXPECT_EQ(c.scorer_hidden, (std::vector<std::size_t>{4, 4}));
  EXPECT_EQ(c.dpo_config().seed, 12u);
  EXPECT_EQ(c.scorer_config().threads, 3u);

  RunConfig back;
  back.merge(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(RunConfig, RejectsUnknownKeysAndWrongTypes) {
  RunConfig c;
  EXPECT_THROW(c.merge(Json::parse(R"({"sede": 1})")), ValidationError);
  EXPECT_THROW(c.merge(Json::parse(R"({"dpo": {"beta": 1}})")), ValidationError);
  EXPECT_THROW(c.merge(Json::parse(R"({"seed": "x"})")), ValidationError);
  EXPECT_THROW(c.merge(Json::parse("[]")), ValidationError);
}

TEST(RunConfig, ProtocolConstantsCannotChange) {
  RunConfig c;
  c.merge(Json::parse(R"({"outlier_sigmas": 3})"));
  EXPECT_THROW(c.validate(), ValidationError);
  RunConfig d;
  d.merge(Json::parse(R"({"subject_removal_fraction": 0.1})"));
  EXPECT_THROW(d.validate(), ValidationError);
  RunConfig e;
  e.merge(Json::parse(R"({"split_ratios": [0, 0, 0]})"));
  EXPECT_THROW(e.validate(), ValidationError);
}

TEST(RunConfig, LoadFromDisk) {
  testing::TempDir dir;
  write_text(dir / "c.json", R"({"low_quality_threshold": 55})");
  EXPECT_EQ(RunConfig::load(dir / "c.json").low_quality_threshold, 55.0);
  write_text(dir / "bad.json", "{");
  EXPECT_THROW(RunConfig::load(dir / "bad.json"), ParseError);
}

TEST(RunReport, RecordsHashesAndConfig) {
  testing::TempDir dir;
  write_text(dir / "in.txt", "abc");
  RunConfig c;
  c.seed = 5;
  RunReport r("demo", c);
  r.add_input("data", dir / "in.txt");
  r.counts()["rows"] = 3;
  r.write(dir / "report.json");
  const Json j = Json::parse(read_text(dir / "report.json"));
  EXPECT_EQ(j["schema_version"], RunReport::kSchemaVersion);
  EXPECT_EQ(j["subcommand"], "demo");
  EXPECT_EQ(j["config"]["seed"], 5);
  EXPECT_EQ(j["inputs"]["data"]["sha256"], "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(j["counts"]["rows"], 3);
}

}  // namespace
}  // namespace prefedit
