#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

#include <httplib.h>

#include "ctn/llm/captioner.hpp"
#include "ctn/llm/gateway.hpp"
#include "support.hpp"

using namespace ctn;
using namespace ctn::llm;
using namespace std::chrono_literals;
using testing::thrown_code;

namespace {

Gateway::Sleeper recording(std::vector<std::chrono::milliseconds>& out) {
  return [&out](std::chrono::milliseconds d) { out.push_back(d); };
}

GenerationRequest request(std::string prompt, std::string backend = "") {
  GenerationRequest r;
  r.prompt = std::move(prompt);
  r.backend_id = std::move(backend);
  return r;
}

/// Local HTTP server on an ephemeral port, stopped on destruction.
struct MockServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;

  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
  ~MockServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
};

}  // namespace

TEST_CASE("stub backend returns its script in order") {
  Gateway gw(RetryPolicy{}, 4, [](auto) {});
  gw.register_backend(std::make_shared<StubBackend>("stub", std::vector<std::string>{"{\"Cause\": \"a\", \"Effect\": \"b\"}", "second"}));
  CHECK(gw.default_backend() == "stub");
  CHECK(gw.generate(request("p")).text == "{\"Cause\": \"a\", \"Effect\": \"b\"}");
  const auto r = gw.generate(request("p"));
  CHECK(r.text == "second");
  CHECK(r.attempt == 1);
  CHECK(r.backend_id == "stub");
  CHECK(gw.generate(request("p")).text == "second");
}

TEST_CASE("transient failures are retried with growing backoff") {
  std::vector<std::chrono::milliseconds> sleeps;
  RetryPolicy policy{4, 100ms, 2.0, 1000ms};
  Gateway gw(policy, 4, recording(sleeps));
  auto stub = std::make_shared<StubBackend>("stub", std::vector<std::string>{"ok"});
  gw.register_backend(stub);
  stub->fail_next(2);
  const auto r = gw.generate(request("p"));
  CHECK(r.attempt == 3);
  CHECK(r.text == "ok");
  CHECK(sleeps == std::vector<std::chrono::milliseconds>{100ms, 200ms});
  CHECK(stub->calls() == 3);
}

TEST_CASE("retries stop at the cap") {
  std::vector<std::chrono::milliseconds> sleeps;
  Gateway gw(RetryPolicy{3, 10ms, 2.0, 1000ms}, 4, recording(sleeps));
  auto stub = std::make_shared<StubBackend>("stub", std::vector<std::string>{"ok"});
  gw.register_backend(stub);
  stub->fail_next(5);
  CHECK(thrown_code([&] { gw.generate(request("p")); }) == ErrorCode::backend_unreachable);
  CHECK(stub->calls() == 3);
  CHECK(sleeps.size() == 2);
}

TEST_CASE("backoff is monotone and capped") {
  RetryPolicy p{10, 50ms, 3.0, 2000ms};
  for (int n = 1; n < 9; ++n) CHECK(p.backoff(n) <= p.backoff(n + 1));
  CHECK(p.backoff(1) == 50ms);
  CHECK(p.backoff(9) == 2000ms);
}

TEST_CASE("context overflow is not retried") {
  Gateway gw(RetryPolicy{}, 4, [](auto) {});
  auto stub = std::make_shared<StubBackend>("stub", std::vector<std::string>{"ok"});
  stub->set_context_limit(5);
  gw.register_backend(stub);
  CHECK(thrown_code([&] { gw.generate(request("one two three four five six")); }) == ErrorCode::context_overflow);
  CHECK(stub->calls() == 1);
  CHECK(gw.generate(request("one two three")).text == "ok");
}

TEST_CASE("invalid requests and unknown backends") {
  Gateway gw(RetryPolicy{}, 4, [](auto) {});
  CHECK(thrown_code([&] { gw.default_backend(); }) == ErrorCode::config_error);
  gw.register_backend(std::make_shared<StubBackend>("stub", std::vector<std::string>{"ok"}));
  auto bad = request("p");
  bad.max_tokens = 0;
  CHECK_THROWS(gw.generate(bad));
  CHECK(thrown_code([&] { gw.generate(request("p", "other")); }) == ErrorCode::backend_unreachable);
}

TEST_CASE("seeded stub generation is referentially transparent") {
  auto make = [] {
    return std::make_shared<StubBackend>("stub", [](const GenerationRequest& r) {
      return r.prompt + "#" + std::to_string(r.seed.value_or(0));
    });
  };
  Gateway a(RetryPolicy{}, 4, [](auto) {}), b(RetryPolicy{}, 4, [](auto) {});
  a.register_backend(make());
  b.register_backend(make());
  testing::Gen g(1);
  for (int i = 0; i < 50; ++i) {
    auto req = request(g.sentence(1, 6));
    req.seed = g.index(0, 1000);
    CHECK(a.generate(req).text == b.generate(req).text);
    CHECK(a.generate(req).text == a.generate(req).text);
  }
}

TEST_CASE("in-flight requests never exceed the cap") {
  constexpr std::size_t kCap = 2;
  Gateway gw(RetryPolicy{}, kCap, [](auto) {});
  std::atomic<int> current{0}, worst{0};
  gw.register_backend(std::make_shared<StubBackend>("slow", [&](const GenerationRequest&) {
    const int now = ++current;
    int prev = worst.load();
    while (now > prev && !worst.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(5ms);
    --current;
    return std::string("ok");
  }));
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i)
    threads.emplace_back([&] {
      for (int k = 0; k < 3; ++k) gw.generate(request("p"));
    });
  for (auto& t : threads) t.join();
  CHECK(worst.load() <= static_cast<int>(kCap));
  CHECK(gw.peak_in_flight("slow") <= kCap);
  CHECK(gw.peak_in_flight("slow") >= 1);
}

TEST_CASE("http chat backend speaks chat-completion json") {
  MockServer mock;
  std::atomic<int> hits{0};
  nlohmann::json last_body;
  std::string last_auth;
  mock.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    last_body = nlohmann::json::parse(req.body);
    last_auth = req.get_header_value("Authorization");
    if (++hits == 1) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"{\"Cause\": \"x\", \"Effect\": \"y\"}"}}]})",
                    "application/json");
  });
  mock.server.Post("/overflow", [](const httplib::Request&, httplib::Response& res) {
    res.status = 400;
    res.set_content(R"({"error":"maximum context length exceeded"})", "application/json");
  });
  mock.start();

  ::setenv("CTN_TEST_GATEWAY_KEY", "sekret", 1);
  HttpBackendConfig cfg;
  cfg.id = "mixtral";
  cfg.base_url = mock.url();
  cfg.model = "mixtral-8x7b";
  cfg.api_key_env = "CTN_TEST_GATEWAY_KEY";
  cfg.timeout_s = 5;
  Gateway gw(RetryPolicy{3, 1ms, 2.0, 10ms}, 2, [](auto) {});
  gw.register_backend(std::make_shared<HttpChatBackend>(cfg));
  auto req = request("describe");
  req.seed = 7;
  const auto r = gw.generate(req);
  CHECK(r.text == "{\"Cause\": \"x\", \"Effect\": \"y\"}");
  CHECK(r.attempt == 2);
  CHECK(last_body["model"] == "mixtral-8x7b");
  CHECK(last_body["messages"][0]["role"] == "user");
  CHECK(last_body["messages"][0]["content"] == "describe");
  CHECK(last_body["seed"] == 7);
  CHECK(last_auth == "Bearer sekret");

  HttpBackendConfig over = cfg;
  over.id = "over";
  over.path = "/overflow";
  gw.register_backend(std::make_shared<HttpChatBackend>(over));
  CHECK(thrown_code([&] { gw.generate(request("p", "over")); }) == ErrorCode::context_overflow);
}

TEST_CASE("unreachable http backend exhausts retries") {
  HttpBackendConfig cfg;
  cfg.base_url = "http://127.0.0.1:1";
  cfg.timeout_s = 1;
  Gateway gw(RetryPolicy{2, 1ms, 2.0, 10ms}, 1, [](auto) {});
  gw.register_backend(std::make_shared<HttpChatBackend>(cfg));
  CHECK(thrown_code([&] { gw.generate(request("p")); }) == ErrorCode::backend_unreachable);
}

TEST_CASE("image captioners") {
  StubImageCaptioner stub({"a", "b"});
  data::Image img{2, 2, std::vector<float>(12, 0.5f)};
  CHECK(stub.caption(img) == "a");
  CHECK(stub.caption(img) == "b");
  CHECK(stub.caption(img) == "b");
  CHECK(stub.calls() == 3);

  MockServer mock;
  std::string seen_image;
  mock.server.Post("/caption", [&](const httplib::Request& req, httplib::Response& res) {
    seen_image = nlohmann::json::parse(req.body)["image"];
    res.set_content(R"({"caption":"a tractor is driving"})", "application/json");
  });
  mock.start();
  HttpImageCaptioner http(HttpCaptionerConfig{mock.url(), "/caption", "CTN_UNSET_KEY_FOR_TEST", 5});
  CHECK(http.caption(img) == "a tractor is driving");
  CHECK(seen_image == encode_png_base64(img));
  CHECK(seen_image.rfind("iVBORw0KGgo", 0) == 0);
}
