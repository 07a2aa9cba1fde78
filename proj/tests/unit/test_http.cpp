// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <httplib.h>

#include <thread>

#include "fixtures.hpp"
#include "prefedit/annsvc.hpp"

namespace prefedit::annsvc {
namespace {

class HttpTest : public ::testing::Test {
 protected:
  void SetUp() override {
    campaign_ = std::make_unique<Campaign>(testing::small_campaign_config(), dir_ / "log.jsonl");
    server_ = std::make_unique<HttpServer>(*campaign_);
    port_ = server_->bind("127.0.0.1", 0);
    thread_ = std::thread([this] { server_->listen(); });
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    for (int i = 0; i < 200 && !client_->Get("/campaigns/camp/progress"); ++i)
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  void TearDown() override {
    server_->stop();
    thread_.join();
  }

  std::pair<int, Json> post(const std::string& path, const Json& body, const httplib::Headers& h = {}) {
    auto res = client_->Post(path, h, body.dump(), "application/json");
    if (!res) return {0, {}};
    return {res->status, Json::parse(res->body)};
  }
  std::pair<int, Json> get(const std::string& path) {
    auto res = client_->Get(path);
    if (!res) return {0, {}};
    return {res->status, Json::parse(res->body)};
  }

  Json answers(const Json& gold_tasks, bool right) {
    Json out = Json::array();
    for (const auto& t : gold_tasks) {
      const std::string id = t["task_id"];
      for (const auto& g : campaign_->config().gold)
        if (g.task.task_id == id) out.push_back({{"task_id", id}, {"body", testing::gold_body(g, right)}});
    }
    return out;
  }

  testing::TempDir dir_;
  std::unique_ptr<Campaign> campaign_;
  std::unique_ptr<HttpServer> server_;
  std::unique_ptr<httplib::Client> client_;
  std::thread thread_;
  int port_ = 0;
};

TEST_F(HttpTest, FullAnnotatorFlow) {
  auto [st, sess] = post("/sessions", {{"annotator_id", "alice"}});
  ASSERT_EQ(st, 200);
  EXPECT_EQ(sess["state"], "pretest");
  ASSERT_EQ(sess["gold_tasks"].size(), 10u);
  for (const auto& t : sess["gold_tasks"]) {
    EXPECT_FALSE(t.contains("expected"));
    EXPECT_TRUE(t.contains("members"));
  }
  const std::string sid = sess["session_id"];

  EXPECT_EQ(get("/sessions/" + sid + "/next").first, 409);
  auto [gst, q] = post("/sessions/" + sid + "/gold", {{"answers", answers(sess["gold_tasks"], true)}});
  ASSERT_EQ(gst, 200);
  EXPECT_EQ(q["state"], "qualified");
  EXPECT_EQ(q["gold_correct"], 10);

  auto [nst, next] = get("/sessions/" + sid + "/next");
  ASSERT_EQ(nst, 200);
  ASSERT_FALSE(next["complete"].get<bool>());
  const std::string task_id = next["task"]["task_id"];
  const Task* task = nullptr;
  for (const auto& t : campaign_->config().tasks)
    if (t.task_id == task_id) task = &t;
  ASSERT_NE(task, nullptr);

  const Json req = {{"task_id", task_id}, {"body", testing::valid_body(*task, 1)}};
  auto [rst, ack] = post("/sessions/" + sid + "/responses", req, {{"Idempotency-Key", "key-1"}});
  ASSERT_EQ(rst, 200);
  EXPECT_EQ(ack["seq"], 1);
  EXPECT_EQ(ack["duplicate"], false);
  EXPECT_EQ(ack["idempotency_key"], "key-1");
  auto [dst, dup] = post("/sessions/" + sid + "/responses", req, {{"Idempotency-Key", "key-1"}});
  EXPECT_EQ(dst, 200);
  EXPECT_EQ(dup["duplicate"], true);
  EXPECT_EQ(post("/sessions/" + sid + "/responses", req, {{"Idempotency-Key", "key-2"}}).first, 409);
  EXPECT_EQ(post("/sessions/" + sid + "/responses", req).first, 400);

  auto [pst, progress] = get("/campaigns/camp/progress");
  EXPECT_EQ(pst, 200);
  EXPECT_EQ(progress["accepted_responses"], 1);
  EXPECT_EQ(progress["n_tasks"], 12);

  auto [est, exported] = get("/campaigns/camp/export");
  EXPECT_EQ(est, 200);
  const std::string lines = exported[task->kind == TaskKind::kRanking ? "rankings" : "ratings"];
  EXPECT_EQ(std::count(lines.begin(), lines.end(), '\n'), 3);

  EXPECT_EQ(get("/sessions/" + sid).second["state"], "active");
}

TEST_F(HttpTest, ErrorStatuses) {
  EXPECT_EQ(post("/sessions", Json::object()).first, 400);
  auto res = client_->Post("/sessions", "{not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(get("/sessions/none/next").first, 404);
  EXPECT_EQ(get("/sessions/none").first, 404);
  EXPECT_EQ(get("/campaigns/other/progress").first, 404);
  EXPECT_EQ(get("/campaigns/other/export").first, 404);

  auto [st, sess] = post("/sessions", {{"annotator_id", "bob"}});
  ASSERT_EQ(st, 200);
  EXPECT_EQ(post("/sessions", {{"annotator_id", "bob"}}).first, 409);
  const std::string sid = sess["session_id"];
  EXPECT_EQ(post("/sessions/" + sid + "/gold", {{"answers", Json::array()}}).first, 400);
  auto [gst, rejected] = post("/sessions/" + sid + "/gold", {{"answers", answers(sess["gold_tasks"], false)}});
  EXPECT_EQ(gst, 200);
  EXPECT_EQ(rejected["state"], "rejected");
  EXPECT_EQ(post("/sessions/" + sid + "/gold", {{"answers", answers(sess["gold_tasks"], true)}}).first, 409);
  EXPECT_EQ(post("/sessions", {{"annotator_id", "bob"}}).first, 409);
  EXPECT_EQ(post("/sessions/" + sid + "/responses", {{"task_id", "rank:g0"}, {"body", Json::object()}},
                 {{"Idempotency-Key", "x"}})
                .first,
            409);
}

}  // namespace
}  // namespace prefedit::annsvc
