#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotd/config.hpp"

namespace cotd {

enum class Role { kSystem, kUser };
enum class MediaKind { kVideo, kAudio };

struct Attachment {
  MediaKind kind = MediaKind::kVideo;
  std::string uri;

  friend bool operator==(const Attachment&, const Attachment&) = default;
};

struct ChatMessage {
  Role role = Role::kUser;
  std::string content;
  std::vector<Attachment> attachments;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
  std::string model_name;
  std::vector<ChatMessage> messages;
  int n = 1;
  double temperature = 1.0;
  int max_tokens = 512;
  std::optional<std::uint64_t> seed;

  // Throws std::invalid_argument on n < 1, temperature < 0 or no messages.
  void validate() const;
};

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;

  friend bool operator==(const Usage&, const Usage&) = default;
};

struct ChatResponse {
  std::vector<std::string> choices;
  Usage usage;
  std::string backend_id;
  // Number of backend attempts it took; not part of the wire format.
  int attempts = 1;

  friend bool operator==(const ChatResponse&, const ChatResponse&) = default;
};

// Request/response payloads in the OpenAI chat-completions wire format.
nlohmann::json request_body(const ChatRequest& request);
ChatRequest request_from_body(const nlohmann::json& body);
nlohmann::json response_body(const ChatResponse& response);
ChatResponse response_from_body(const nlohmann::json& body, std::string backend_id);

// Digest over the canonical request body.
std::string request_digest(const ChatRequest& request);
std::string response_digest(const ChatResponse& response);

/// Result of one backend attempt. `status` follows HTTP; 0 means the request
/// never produced a status (connection failure, timeout).
struct BackendReply {
  int status = 200;
  ChatResponse response;
  std::string error;
};

bool is_transient_status(int status);

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string id() const = 0;
  virtual BackendReply send(const ChatRequest& request) = 0;
};

/// OpenAI-compatible HTTP(S) backend: POST {endpoint}/v1/chat/completions.
class HttpBackend final : public Backend {
 public:
  HttpBackend(std::string endpoint, std::optional<std::string> api_key,
              std::chrono::duration<double> timeout = std::chrono::seconds(60));

  std::string id() const override { return endpoint_; }
  BackendReply send(const ChatRequest& request) override;

  // Process-wide count of network round trips issued by any HttpBackend.
  static std::uint64_t network_operations();

 private:
  std::string endpoint_;
  std::optional<std::string> api_key_;
  std::chrono::duration<double> timeout_;
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::duration<double> base_delay = std::chrono::seconds(1);
  double factor = 2.0;
  double jitter = 0.1;  // fractional, uniform in [-jitter, +jitter]

  static RetryPolicy from_config(const RetryConfig& c);
};

struct AuditRecord {
  std::string timestamp;
  std::string backend_id;
  std::string request_digest;
  std::string response_digest;
  int attempts = 0;
  std::string tag;
  nlohmann::json request;
  nlohmann::json response;  // null when the call failed permanently
};

nlohmann::json to_json(const AuditRecord& r);
AuditRecord audit_record_from_json(const nlohmann::json& j);

/// Collects audit records from concurrent calls. Records are flushed ordered
/// by their caller-supplied tag so the log does not depend on scheduling.
class AuditLog {
 public:
  void append(AuditRecord record);
  std::vector<AuditRecord> records() const;
  // Appends the buffered records (sorted by tag) to `path` and clears the buffer.
  void flush(const std::filesystem::path& path);

 private:
  mutable std::mutex mu_;
  std::vector<AuditRecord> records_;
};

class GatewayError : public std::runtime_error {
 public:
  GatewayError(std::string message, int status, int attempts)
      : std::runtime_error(std::move(message)), status_(status), attempts_(attempts) {}
  int status() const { return status_; }
  int attempts() const { return attempts_; }

 private:
  int status_;
  int attempts_;
};

using Sleeper = std::function<void(std::chrono::duration<double>)>;

/// Retrying, concurrency-bounded front end to a Backend. Shareable across
/// threads; at most `max_in_flight` requests reach the backend at once.
class Gateway {
 public:
  Gateway(std::shared_ptr<Backend> backend, RetryPolicy retry = {}, int max_in_flight = 4,
          std::shared_ptr<AuditLog> audit = nullptr, Sleeper sleeper = {},
          std::uint64_t jitter_seed = 0);

  // Returns exactly request.n choices or throws GatewayError.
  ChatResponse chat_complete(const ChatRequest& request, std::string_view tag = {});

  const Backend& backend() const { return *backend_; }
  std::uint64_t retries() const { return retries_.load(); }

 private:
  std::chrono::duration<double> backoff(int attempt);

  std::shared_ptr<Backend> backend_;
  RetryPolicy retry_;
  std::counting_semaphore<1024> slots_;
  std::shared_ptr<AuditLog> audit_;
  Sleeper sleeper_;
  std::mutex jitter_mu_;
  std::uint64_t jitter_state_;
  std::atomic<std::uint64_t> retries_{0};
};

// ---------------------------------------------------------------------------
// Mock backend

using MockGenerator =
    std::function<std::vector<std::string>(const ChatRequest& request, std::uint64_t seed)>;

struct MockRule {
  // Matches when the request's concatenated message text and attachment URIs
  // contain this substring. Empty matches everything.
  std::string contains;
  int priority = 0;
  std::vector<std::string> completions;  // cycled to fill n
  MockGenerator generator;               // used when set
};

struct MockScript {
  std::vector<MockRule> rules;
  std::vector<std::string> default_completions{""};
  // Statuses returned by the first calls (one per call) before normal service.
  std::vector<int> injected_statuses;
  std::chrono::duration<double> latency{0};
  std::string id = "mock";
};

/// Deterministic, hermetic backend: responses are a pure function of the
/// canonical request and the seed. Instrumented for concurrency tests.
class MockBackend final : public Backend {
 public:
  MockBackend(MockScript script, std::uint64_t seed);

  std::string id() const override { return script_.id; }
  BackendReply send(const ChatRequest& request) override;

  std::uint64_t calls() const { return calls_.load(); }
  int max_in_flight_observed() const { return max_in_flight_.load(); }

 private:
  const MockRule* match(const ChatRequest& request) const;

  MockScript script_;
  std::uint64_t seed_;
  std::atomic<std::uint64_t> calls_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
  std::atomic<std::size_t> injected_cursor_{0};
};

// Throws std::invalid_argument when two rules share a priority and one's
// pattern contains the other's (every request matching one matches both).
std::shared_ptr<MockBackend> mock_program(MockScript script, std::uint64_t seed = 0);

/// Serves responses recorded in an audit log, keyed by request digest and
/// replayed in recorded order for repeated digests.
class ReplayBackend final : public Backend {
 public:
  explicit ReplayBackend(const std::vector<AuditRecord>& records);
  static std::shared_ptr<ReplayBackend> from_file(const std::filesystem::path& path);

  std::string id() const override { return "replay"; }
  BackendReply send(const ChatRequest& request) override;

 private:
  std::mutex mu_;
  std::vector<std::pair<std::string, ChatResponse>> entries_;
  std::vector<bool> used_;
};

}  // namespace cotd
