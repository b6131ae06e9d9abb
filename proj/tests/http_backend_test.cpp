#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <thread>

#include "cotd/gateway.hpp"
#include "cotd/serialization.hpp"

namespace cotd {
namespace {

// Local OpenAI-style endpoint: fails the first `failures` calls with 429.
class FakeServer {
 public:
  explicit FakeServer(int failures) : failures_(failures) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      last_auth_ = req.get_header_value("Authorization");
      last_body_ = req.body;
      if (calls_++ < failures_) {
        res.status = 429;
        res.set_content("slow down", "text/plain");
        return;
      }
      const json body = json::parse(req.body);
      json choices = json::array();
      for (int i = body.value("n", 1) - 1; i >= 0; --i) {
        choices.push_back({{"index", i}, {"message", {{"role", "assistant"}, {"content", "c" + std::to_string(i)}}}});
      }
      res.set_content(json{{"choices", choices}, {"usage", {{"prompt_tokens", 7}, {"completion_tokens", 3}}}}.dump(),
                      "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int calls() const { return calls_.load(); }
  std::string last_auth() const { return last_auth_; }
  std::string last_body() const { return last_body_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  int failures_;
  std::atomic<int> calls_{0};
  std::string last_auth_;
  std::string last_body_;
};

ChatRequest request() {
  ChatRequest r;
  r.model_name = "teacher";
  r.messages = {{Role::kUser, "q", {{MediaKind::kVideo, "file:///clip.mp4"}}}};
  r.n = 2;
  return r;
}

TEST(HttpBackendTest, SpeaksChatCompletionsAndRetries429) {
  FakeServer server(1);
  const auto before = HttpBackend::network_operations();
  Gateway gw(std::make_shared<HttpBackend>(server.endpoint(), "sk-test"), {}, 2, nullptr,
             [](auto) {});
  const ChatResponse r = gw.chat_complete(request());
  EXPECT_EQ(r.choices, (std::vector<std::string>{"c0", "c1"}));
  EXPECT_EQ(r.attempts, 2);
  EXPECT_EQ(r.usage.prompt_tokens, 7);
  EXPECT_EQ(server.calls(), 2);
  EXPECT_EQ(server.last_auth(), "Bearer sk-test");
  EXPECT_EQ(HttpBackend::network_operations() - before, 2u);

  const json sent = json::parse(server.last_body());
  EXPECT_EQ(sent["model"], "teacher");
  EXPECT_EQ(sent["n"], 2);
  EXPECT_EQ(sent["messages"][0]["content"][1]["video_url"]["url"], "file:///clip.mp4");
}

TEST(HttpBackendTest, AcceptsV1SuffixInEndpoint) {
  FakeServer server(0);
  HttpBackend backend(server.endpoint() + "/v1/", std::nullopt);
  const BackendReply r = backend.send(request());
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(server.last_auth(), "");
}

TEST(HttpBackendTest, ConnectionFailureIsTransient) {
  HttpBackend backend("http://127.0.0.1:1", std::nullopt, std::chrono::milliseconds(200));
  const BackendReply r = backend.send(request());
  EXPECT_EQ(r.status, 0);
  EXPECT_TRUE(is_transient_status(r.status));
}

TEST(HttpBackendTest, RejectsNonHttpEndpoints) {
  EXPECT_THROW(HttpBackend("ftp://x", std::nullopt), std::invalid_argument);
}

}  // namespace
}  // namespace cotd
