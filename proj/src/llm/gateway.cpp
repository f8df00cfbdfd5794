#include "ctn/llm/gateway.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "ctn/text/tokenizer.hpp"

namespace ctn::llm {

void GenerationRequest::validate() const {
  if (max_tokens <= 0) throw Error(ErrorCode::invariant_violation, "max_tokens must be > 0");
  if (!(temperature >= 0.0)) throw Error(ErrorCode::invariant_violation, "temperature must be >= 0");
}

StubBackend::StubBackend(std::string id, std::vector<std::string> script)
    : id_(std::move(id)), script_(std::move(script)) {
  if (script_.empty()) throw Error(ErrorCode::empty_input, "stub backend needs at least one response");
}

StubBackend::StubBackend(std::string id, Responder responder)
    : id_(std::move(id)), responder_(std::move(responder)) {}

std::string StubBackend::complete(const GenerationRequest& req) {
  std::lock_guard lock(mu_);
  seen_.push_back(req);
  if (context_limit_ && text::word_count(req.prompt) > *context_limit_)
    throw Error(ErrorCode::context_overflow,
                id_ + ": prompt of " + std::to_string(text::word_count(req.prompt)) + " words exceeds limit " +
                    std::to_string(*context_limit_));
  if (failures_left_ > 0) {
    --failures_left_;
    throw TransientFailure(id_ + ": scripted transport failure");
  }
  if (responder_) return responder_(req);
  const std::string& out = script_[std::min(next_, script_.size() - 1)];
  ++next_;
  return out;
}

void StubBackend::fail_next(int n) {
  std::lock_guard lock(mu_);
  failures_left_ = n;
}

std::size_t StubBackend::calls() const {
  std::lock_guard lock(mu_);
  return seen_.size();
}

std::vector<GenerationRequest> StubBackend::requests() const {
  std::lock_guard lock(mu_);
  return seen_;
}

HttpChatBackend::HttpChatBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.base_url.empty()) throw Error(ErrorCode::config_error, "http backend needs base_url");
}

std::string HttpChatBackend::complete(const GenerationRequest& req) {
  httplib::Client client(cfg_.base_url);
  client.set_connection_timeout(cfg_.timeout_s, 0);
  client.set_read_timeout(cfg_.timeout_s, 0);
  httplib::Headers headers;
  if (!cfg_.api_key_env.empty()) {
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  nlohmann::json body{{"model", cfg_.model},
                      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", req.prompt}}})},
                      {"max_tokens", req.max_tokens},
                      {"temperature", req.temperature}};
  if (req.seed) body["seed"] = *req.seed;

  auto res = client.Post(cfg_.path, headers, body.dump(), "application/json");
  if (!res) throw TransientFailure(cfg_.id + ": " + httplib::to_string(res.error()));
  if (res->status == 429 || res->status >= 500)
    throw TransientFailure(cfg_.id + ": HTTP " + std::to_string(res->status));
  if (res->status >= 400) {
    const std::string excerpt = res->body.substr(0, 300);
    if (excerpt.find("context") != std::string::npos && excerpt.find("length") != std::string::npos)
      throw Error(ErrorCode::context_overflow, cfg_.id + ": " + excerpt);
    throw Error(ErrorCode::backend_unreachable, cfg_.id + ": HTTP " + std::to_string(res->status) + ": " + excerpt);
  }
  const auto j = nlohmann::json::parse(res->body, nullptr, false);
  if (j.is_discarded() || !j.contains("choices") || j["choices"].empty())
    throw Error(ErrorCode::parse_error, cfg_.id + ": unexpected response " + res->body.substr(0, 300));
  const auto& msg = j["choices"][0];
  if (msg.contains("message") && msg["message"].contains("content") && msg["message"]["content"].is_string())
    return msg["message"]["content"].get<std::string>();
  if (msg.contains("text") && msg["text"].is_string()) return msg["text"].get<std::string>();
  throw Error(ErrorCode::parse_error, cfg_.id + ": no completion text in response");
}

std::chrono::milliseconds RetryPolicy::backoff(int failed_attempts) const {
  double ms = static_cast<double>(initial_backoff.count());
  for (int i = 1; i < failed_attempts; ++i) ms *= multiplier;
  return std::chrono::milliseconds(static_cast<std::int64_t>(std::min(ms, static_cast<double>(max_backoff.count()))));
}

Gateway::Gateway(RetryPolicy policy, std::size_t max_in_flight, Sleeper sleeper)
    : policy_(policy), max_in_flight_(max_in_flight), sleeper_(std::move(sleeper)) {
  if (policy_.max_attempts < 1) throw Error(ErrorCode::config_error, "max_attempts must be >= 1");
  if (max_in_flight_ < 1) throw Error(ErrorCode::config_error, "max_in_flight must be >= 1");
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

void Gateway::register_backend(std::shared_ptr<Backend> backend) {
  std::lock_guard lock(mu_);
  const std::string id = backend->id();
  if (default_.empty()) default_ = id;
  slots_[id] = Slot{std::move(backend), 0, 0};
}

bool Gateway::has_backend(const std::string& id) const {
  std::lock_guard lock(mu_);
  return slots_.count(id) != 0;
}

const std::string& Gateway::default_backend() const {
  std::lock_guard lock(mu_);
  if (default_.empty()) throw Error(ErrorCode::config_error, "no backend registered");
  return default_;
}

GenerationResult Gateway::generate(GenerationRequest req) {
  req.validate();
  if (req.backend_id.empty()) req.backend_id = default_backend();
  Slot* slot = nullptr;
  {
    std::unique_lock lock(mu_);
    auto it = slots_.find(req.backend_id);
    if (it == slots_.end()) throw Error(ErrorCode::backend_unreachable, "unknown backend " + req.backend_id);
    slot = &it->second;
    cv_.wait(lock, [&] { return slot->in_flight < max_in_flight_; });
    ++slot->in_flight;
    slot->peak = std::max(slot->peak, slot->in_flight);
  }
  struct Release {
    Gateway* g;
    Slot* s;
    ~Release() {
      {
        std::lock_guard lock(g->mu_);
        --s->in_flight;
      }
      g->cv_.notify_all();
    }
  } release{this, slot};

  std::string last_error;
  for (int attempt = 1; attempt <= policy_.max_attempts; ++attempt) {
    const auto start = std::chrono::steady_clock::now();
    try {
      std::string text = slot->backend->complete(req);
      const auto elapsed = std::chrono::steady_clock::now() - start;
      return {std::move(text), req.backend_id,
              std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count(), attempt};
    } catch (const TransientFailure& e) {
      last_error = e.what();
      if (attempt < policy_.max_attempts) sleeper_(policy_.backoff(attempt));
    }
  }
  throw Error(ErrorCode::backend_unreachable,
              req.backend_id + " failed after " + std::to_string(policy_.max_attempts) + " attempts: " + last_error);
}

std::size_t Gateway::peak_in_flight(const std::string& backend_id) const {
  std::lock_guard lock(mu_);
  auto it = slots_.find(backend_id);
  return it == slots_.end() ? 0 : it->second.peak;
}

}  // namespace ctn::llm
