#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ctn/error.hpp"

namespace ctn::llm {

inline constexpr double kGenerationTemperature = 0.7;
inline constexpr double kJudgeTemperature = 0.0;

struct GenerationRequest {
  std::string prompt;
  int max_tokens = 256;
  double temperature = kGenerationTemperature;
  std::optional<std::uint64_t> seed;
  std::string backend_id;

  void validate() const;
};

struct GenerationResult {
  std::string text;
  std::string backend_id;
  std::int64_t latency_ms = 0;
  int attempt = 1;
};

/// Transport-level failure worth retrying (connection refused, 5xx, 429).
class TransientFailure : public Error {
 public:
  explicit TransientFailure(const std::string& what) : Error(ErrorCode::backend_unreachable, what) {}
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual const std::string& id() const = 0;
  /// Raw completion text. Throws TransientFailure or Error(context_overflow).
  virtual std::string complete(const GenerationRequest& req) = 0;
};

/// Deterministic backend for tests and offline runs. Responses come from a
/// script (consumed in order, the last one repeating) or from a responder function.
class StubBackend final : public Backend {
 public:
  using Responder = std::function<std::string(const GenerationRequest&)>;

  StubBackend(std::string id, std::vector<std::string> script);
  StubBackend(std::string id, Responder responder);

  const std::string& id() const override { return id_; }
  std::string complete(const GenerationRequest& req) override;

  /// The next n calls throw TransientFailure.
  void fail_next(int n);
  /// Prompts with more whitespace-separated words than this overflow.
  void set_context_limit(std::size_t words) { context_limit_ = words; }
  std::size_t calls() const;
  std::vector<GenerationRequest> requests() const;

 private:
  std::string id_;
  std::vector<std::string> script_;
  Responder responder_;
  std::size_t next_ = 0;
  int failures_left_ = 0;
  std::optional<std::size_t> context_limit_;
  std::vector<GenerationRequest> seen_;
  mutable std::mutex mu_;
};

struct HttpBackendConfig {
  std::string id = "http";
  /// scheme://host[:port], e.g. http://localhost:8000
  std::string base_url;
  std::string path = "/v1/chat/completions";
  std::string model;
  /// Environment variable holding the bearer token; empty or unset sends none.
  std::string api_key_env = "CTN_LLM_API_KEY";
  int timeout_s = 120;
};

/// Chat-completion JSON over HTTP(S): {"model", "messages": [{"role": "user", ...}], ...}.
class HttpChatBackend final : public Backend {
 public:
  explicit HttpChatBackend(HttpBackendConfig cfg);
  const std::string& id() const override { return cfg_.id; }
  std::string complete(const GenerationRequest& req) override;

 private:
  HttpBackendConfig cfg_;
};

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds initial_backoff{250};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{8000};

  /// Delay before attempt n+1 after n failed attempts (n >= 1).
  std::chrono::milliseconds backoff(int failed_attempts) const;
};

/// Routes requests to registered backends with retries and a cap on
/// concurrent in-flight requests per backend.
class Gateway {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit Gateway(RetryPolicy policy = {}, std::size_t max_in_flight = 4, Sleeper sleeper = {});

  void register_backend(std::shared_ptr<Backend> backend);
  bool has_backend(const std::string& id) const;
  /// Id used when a request leaves backend_id empty (the first registered).
  const std::string& default_backend() const;

  GenerationResult generate(GenerationRequest req);

  std::size_t peak_in_flight(const std::string& backend_id) const;
  const RetryPolicy& policy() const { return policy_; }

 private:
  struct Slot {
    std::shared_ptr<Backend> backend;
    std::size_t in_flight = 0;
    std::size_t peak = 0;
  };

  RetryPolicy policy_;
  std::size_t max_in_flight_;
  Sleeper sleeper_;
  std::string default_;
  std::map<std::string, Slot> slots_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
};

}  // namespace ctn::llm
