#include <chrono>
#include <thread>

#include <gtest/gtest.h>

#include "support/fakes.hpp"
#include "veille/llmgate.hpp"
#include "veille/parallel.hpp"

using namespace veille;
using namespace std::chrono_literals;

namespace {

CompletionRequest request(std::string user = "Bonjour", std::string tag = "ner") {
  return {"gpt-4.1", {{Role::system, "sys"}, {Role::user, std::move(user)}}, 0.0, 4096, std::move(tag)};
}

GatewayConfig config(GatewayMode mode, const std::filesystem::path& dir) {
  GatewayConfig c;
  c.mode = mode;
  c.endpoint = "http://provider.test/v1";
  c.api_key = "sk-test";
  c.fixtures = dir;
  c.backoff = 10ms;
  c.prices = {1.0, 2.0};
  return c;
}

}  // namespace

TEST(Digest, IgnoresTagButNotContent) {
  EXPECT_EQ(request_digest(request("a", "ner")), request_digest(request("a", "verify")));
  EXPECT_NE(request_digest(request("a")), request_digest(request("b")));
  auto hot = request("a");
  hot.temperature = 0.7;
  EXPECT_NE(request_digest(hot), request_digest(request("a")));
  EXPECT_EQ(request_digest(request("a")).size(), 64u);
}

TEST(CheckRequest, RejectsMalformed) {
  EXPECT_THROW(check_request({"m", {}, 0, 1, ""}), ValidationError);
  EXPECT_THROW(check_request({"m", {{Role::user, "x"}}, 0, 1, ""}), ValidationError);
  auto neg = request();
  neg.temperature = -1;
  EXPECT_THROW(check_request(neg), ValidationError);
  EXPECT_THROW(check_request(request("")), ValidationError);
}

TEST(Gateway, RecordThenReplayWithoutNetwork) {
  const auto dir = fakes::temp_dir("gw");
  auto client = std::make_shared<fakes::ScriptedClient>(
      [](const nlohmann::json& body) { return HttpResponse{200, fakes::chat_payload("echo:" + fakes::last_user_message(body), 12, 3)}; });
  {
    Gateway rec(config(GatewayMode::record, dir), client);
    auto r = rec.complete(request("salut"));
    EXPECT_EQ(r.content, "echo:salut");
    EXPECT_EQ(r.usage, (TokenUsage{12, 3}));
    EXPECT_EQ(client->last_url, "http://provider.test/v1/chat/completions");
    ASSERT_EQ(client->last_headers.size(), 1u);
    EXPECT_EQ(client->last_headers[0].second, "Bearer sk-test");
  }
  const auto before = network_request_counter().load();
  Gateway replay(config(GatewayMode::replay, dir));
  auto r = replay.complete(request("salut", "verify"));
  EXPECT_EQ(r.content, "echo:salut");
  EXPECT_EQ(replay.live_calls(), 0u);
  EXPECT_EQ(network_request_counter().load(), before);
  EXPECT_EQ(client->calls, 1);
  std::filesystem::remove_all(dir);
}

TEST(Gateway, ReplayMissNamesDigest) {
  const auto dir = fakes::temp_dir("miss");
  Gateway g(config(GatewayMode::replay, dir));
  const auto req = request("absent");
  try {
    g.complete(req);
    FAIL();
  } catch (const ReplayMissError& e) {
    EXPECT_EQ(e.digest(), request_digest(req));
    EXPECT_NE(std::string(e.what()).find(request_digest(req)), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST(Gateway, CorruptFixtureIsConfigError) {
  const auto dir = fakes::temp_dir("corrupt");
  const auto req = request("x");
  std::ofstream(dir / (request_digest(req) + ".json")) << "{not json";
  Gateway g(config(GatewayMode::replay, dir));
  EXPECT_THROW(g.complete(req), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST(Gateway, TransientFailureRetriedWithBackoff) {
  const auto dir = fakes::temp_dir("retry");
  int n = 0;
  auto client = std::make_shared<fakes::ScriptedClient>([&](const nlohmann::json&) {
    if (n++ == 0) return HttpResponse{503, "busy"};
    return HttpResponse{200, fakes::chat_payload("ok")};
  });
  Gateway g(config(GatewayMode::live, dir), client);
  std::vector<std::chrono::milliseconds> sleeps;
  g.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d); });
  auto r = g.complete(request());
  EXPECT_EQ(r.attempts, 2);
  EXPECT_EQ(sleeps, (std::vector<std::chrono::milliseconds>{10ms}));
  std::filesystem::remove_all(dir);
}

TEST(Gateway, GivesUpAfterMaxAttempts) {
  const auto dir = fakes::temp_dir("giveup");
  auto client = std::make_shared<fakes::ScriptedClient>([](const nlohmann::json&) -> HttpResponse {
    throw TransportError("connection reset", true);
  });
  Gateway g(config(GatewayMode::live, dir), client);
  std::vector<std::chrono::milliseconds> sleeps;
  g.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d); });
  try {
    g.complete(request());
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_FALSE(e.transient());
    EXPECT_NE(std::string(e.what()).find("3 attempts"), std::string::npos);
  }
  EXPECT_EQ(client->calls, 3);
  EXPECT_EQ(sleeps, (std::vector<std::chrono::milliseconds>{10ms, 20ms}));
  std::filesystem::remove_all(dir);
}

TEST(Gateway, PermanentErrorsNotRetried) {
  const auto dir = fakes::temp_dir("perm");
  auto client = std::make_shared<fakes::ScriptedClient>([](const nlohmann::json&) { return HttpResponse{401, "no"}; });
  Gateway g(config(GatewayMode::live, dir), client);
  EXPECT_THROW(g.complete(request()), TransportError);
  EXPECT_EQ(client->calls, 1);
  auto junk = std::make_shared<fakes::ScriptedClient>([](const nlohmann::json&) { return HttpResponse{200, "{}"}; });
  Gateway g2(config(GatewayMode::live, dir), junk);
  EXPECT_THROW(g2.complete(request()), ProviderError);
  std::filesystem::remove_all(dir);
}

TEST(Usage, LedgerIsAdditiveAndPriced) {
  const auto dir = fakes::temp_dir("usage");
  auto client = std::make_shared<fakes::ScriptedClient>(
      [](const nlohmann::json&) { return HttpResponse{200, fakes::chat_payload("ok", 10, 5)}; });
  Gateway g(config(GatewayMode::live, dir), client);
  parallel_for(11, 4, [&](std::size_t i) { g.complete(request("m" + std::to_string(i), i < 6 ? "ner" : "events")); });
  auto rep = g.usage();
  EXPECT_EQ(rep.total.input_tokens, 110u);
  EXPECT_EQ(rep.total.output_tokens, 55u);
  EXPECT_EQ(rep.total.requests, 11u);
  EXPECT_EQ(rep.stages.at("ner").requests, 6u);
  EXPECT_EQ(rep.stages.at("events").input_tokens, 50u);
  EXPECT_NEAR(rep.total.cost, 110 * 1e-6 + 55 * 2e-6, 1e-15);
  EXPECT_NEAR(estimate_cost({100, 5, 1, 0ms, 0}, {1.0, 2.0}), 0.00011, 1e-15);
  auto round = stages_from_json(nlohmann::json::parse(to_json(rep).dump()));
  EXPECT_EQ(round.at("ner").output_tokens, 30u);
  std::filesystem::remove_all(dir);
}

TEST(Gateway, TalksToLocalHttpServer) {
  httplib::Server srv;
  std::string auth, path;
  srv.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    auth = req.get_header_value("Authorization");
    path = req.path;
    auto body = nlohmann::json::parse(req.body);
    res.set_content(fakes::chat_payload("max=" + std::to_string(body["max_tokens"].get<int>()), 7, 1),
                    "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread t([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  const auto dir = fakes::temp_dir("srv");
  auto cfg = config(GatewayMode::live, dir);
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  Gateway g(cfg);
  auto r = g.complete(request());
  srv.stop();
  t.join();
  EXPECT_EQ(r.content, "max=4096");
  EXPECT_EQ(auth, "Bearer sk-test");
  EXPECT_EQ(path, "/v1/chat/completions");
  std::filesystem::remove_all(dir);
}

TEST(Parallel, LowestFailingIndexWins) {
  std::vector<int> seen(50, 0);
  try {
    parallel_for(50, 4, [&](std::size_t i) {
      seen[i] = 1;
      if (i == 7 || i == 30) throw std::runtime_error(std::to_string(i));
    });
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "7");
  }
}
