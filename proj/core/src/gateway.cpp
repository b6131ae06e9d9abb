#include "cotd/gateway.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <thread>

#include "cotd/digest.hpp"
#include "cotd/rng.hpp"
#include "cotd/serialization.hpp"

namespace cotd {
namespace {

std::string_view role_name(Role r) { return r == Role::kSystem ? "system" : "user"; }

Role role_from_name(std::string_view s) {
  if (s == "system") return Role::kSystem;
  if (s == "user") return Role::kUser;
  throw std::invalid_argument("unsupported message role '" + std::string(s) + "'");
}

std::string_view part_type(MediaKind k) { return k == MediaKind::kVideo ? "video_url" : "audio_url"; }

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

void ChatRequest::validate() const {
  if (n < 1) throw std::invalid_argument("ChatRequest.n must be >= 1");
  if (!(temperature >= 0)) throw std::invalid_argument("ChatRequest.temperature must be >= 0");
  if (messages.empty()) throw std::invalid_argument("ChatRequest.messages must be non-empty");
}

json request_body(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    json msg = {{"role", role_name(m.role)}};
    if (m.attachments.empty()) {
      msg["content"] = m.content;
    } else {
      json parts = json::array();
      parts.push_back({{"type", "text"}, {"text", m.content}});
      for (const auto& a : m.attachments) {
        const std::string type(part_type(a.kind));
        parts.push_back({{"type", type}, {type, {{"url", a.uri}}}});
      }
      msg["content"] = std::move(parts);
    }
    messages.push_back(std::move(msg));
  }
  json body = {{"model", request.model_name},
               {"messages", std::move(messages)},
               {"n", request.n},
               {"temperature", request.temperature},
               {"max_tokens", request.max_tokens}};
  if (request.seed) body["seed"] = *request.seed;
  return body;
}

ChatRequest request_from_body(const json& body) {
  ChatRequest r;
  r.model_name = body.at("model").get<std::string>();
  r.n = body.value("n", 1);
  r.temperature = body.value("temperature", 1.0);
  r.max_tokens = body.value("max_tokens", 512);
  if (body.contains("seed") && !body["seed"].is_null()) r.seed = body["seed"].get<std::uint64_t>();
  for (const auto& m : body.at("messages")) {
    ChatMessage msg;
    msg.role = role_from_name(m.at("role").get<std::string>());
    const json& content = m.at("content");
    if (content.is_string()) {
      msg.content = content.get<std::string>();
    } else {
      for (const auto& part : content) {
        const auto type = part.at("type").get<std::string>();
        if (type == "text") {
          msg.content += part.at("text").get<std::string>();
        } else if (type == "video_url" || type == "audio_url") {
          msg.attachments.push_back({type == "video_url" ? MediaKind::kVideo : MediaKind::kAudio,
                                     part.at(type).at("url").get<std::string>()});
        }
      }
    }
    r.messages.push_back(std::move(msg));
  }
  return r;
}

json response_body(const ChatResponse& response) {
  json choices = json::array();
  for (std::size_t i = 0; i < response.choices.size(); ++i) {
    choices.push_back({{"index", i},
                       {"message", {{"role", "assistant"}, {"content", response.choices[i]}}},
                       {"finish_reason", "stop"}});
  }
  return {{"object", "chat.completion"},
          {"choices", std::move(choices)},
          {"usage",
           {{"prompt_tokens", response.usage.prompt_tokens},
            {"completion_tokens", response.usage.completion_tokens}}}};
}

ChatResponse response_from_body(const json& body, std::string backend_id) {
  ChatResponse r;
  r.backend_id = std::move(backend_id);
  std::vector<std::pair<std::size_t, std::string>> indexed;
  std::size_t position = 0;
  for (const auto& c : body.at("choices")) {
    const std::size_t index = c.contains("index") ? c["index"].get<std::size_t>() : position;
    const json& content = c.at("message").at("content");
    indexed.emplace_back(index, content.is_string() ? content.get<std::string>() : std::string());
    ++position;
  }
  std::stable_sort(indexed.begin(), indexed.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [_, text] : indexed) r.choices.push_back(std::move(text));
  if (auto it = body.find("usage"); it != body.end() && it->is_object()) {
    r.usage.prompt_tokens = it->value("prompt_tokens", 0);
    r.usage.completion_tokens = it->value("completion_tokens", 0);
  }
  return r;
}

std::string request_digest(const ChatRequest& request) {
  return sha256_hex(canonical(request_body(request)));
}

std::string response_digest(const ChatResponse& response) {
  return sha256_hex(canonical(response_body(response)));
}

bool is_transient_status(int status) { return status == 0 || status == 429 || status >= 500; }

RetryPolicy RetryPolicy::from_config(const RetryConfig& c) {
  RetryPolicy p;
  p.max_attempts = c.max_attempts;
  p.base_delay = std::chrono::duration<double>(c.base_delay_s);
  p.factor = c.factor;
  p.jitter = c.jitter;
  return p;
}

json to_json(const AuditRecord& r) {
  return {{"timestamp", r.timestamp},
          {"backend_id", r.backend_id},
          {"request_digest", r.request_digest},
          {"response_digest", r.response_digest},
          {"attempts", r.attempts},
          {"tag", r.tag},
          {"request", r.request},
          {"response", r.response}};
}

AuditRecord audit_record_from_json(const json& j) {
  AuditRecord r;
  r.timestamp = j.value("timestamp", "");
  r.backend_id = j.at("backend_id").get<std::string>();
  r.request_digest = j.at("request_digest").get<std::string>();
  r.response_digest = j.value("response_digest", "");
  r.attempts = j.value("attempts", 0);
  r.tag = j.value("tag", "");
  r.request = j.value("request", json());
  r.response = j.value("response", json());
  return r;
}

void AuditLog::append(AuditRecord record) {
  std::lock_guard lock(mu_);
  records_.push_back(std::move(record));
}

std::vector<AuditRecord> AuditLog::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

void AuditLog::flush(const std::filesystem::path& path) {
  std::vector<AuditRecord> batch;
  {
    std::lock_guard lock(mu_);
    batch.swap(records_);
  }
  std::stable_sort(batch.begin(), batch.end(),
                   [](const AuditRecord& a, const AuditRecord& b) { return a.tag < b.tag; });
  std::string existing;
  if (std::filesystem::exists(path)) existing = read_text_file(path);
  for (const auto& r : batch) {
    existing += canonical(to_json(r));
    existing += '\n';
  }
  write_text_file(path, existing);
}

Gateway::Gateway(std::shared_ptr<Backend> backend, RetryPolicy retry, int max_in_flight,
                 std::shared_ptr<AuditLog> audit, Sleeper sleeper, std::uint64_t jitter_seed)
    : backend_(std::move(backend)),
      retry_(retry),
      slots_(std::max(1, std::min(max_in_flight, 1024))),
      audit_(std::move(audit)),
      sleeper_(std::move(sleeper)),
      jitter_state_(jitter_seed) {
  if (!backend_) throw std::invalid_argument("Gateway requires a backend");
  if (!sleeper_) {
    sleeper_ = [](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); };
  }
}

std::chrono::duration<double> Gateway::backoff(int attempt) {
  double u;
  {
    std::lock_guard lock(jitter_mu_);
    jitter_state_ = splitmix64(jitter_state_);
    u = static_cast<double>(jitter_state_ >> 11) * 0x1.0p-53;
  }
  const double scale = std::pow(retry_.factor, attempt - 1) * (1.0 + retry_.jitter * (2.0 * u - 1.0));
  return retry_.base_delay * scale;
}

ChatResponse Gateway::chat_complete(const ChatRequest& request, std::string_view tag) {
  request.validate();
  AuditRecord audit;
  audit.backend_id = backend_->id();
  audit.request_digest = request_digest(request);
  audit.request = request_body(request);
  audit.tag = std::string(tag);

  auto finish = [&](int attempts, const ChatResponse* response) {
    if (!audit_) return;
    audit.timestamp = utc_timestamp();
    audit.attempts = attempts;
    if (response) {
      audit.response_digest = response_digest(*response);
      audit.response = response_body(*response);
    }
    audit_->append(audit);
  };

  for (int attempt = 1;; ++attempt) {
    BackendReply reply;
    slots_.acquire();
    try {
      reply = backend_->send(request);
    } catch (...) {
      slots_.release();
      throw;
    }
    slots_.release();

    if (reply.status == 200) {
      if (static_cast<int>(reply.response.choices.size()) != request.n) {
        finish(attempt, nullptr);
        throw GatewayError("backend returned " + std::to_string(reply.response.choices.size()) +
                               " choices, expected " + std::to_string(request.n),
                           reply.status, attempt);
      }
      reply.response.attempts = attempt;
      if (reply.response.backend_id.empty()) reply.response.backend_id = backend_->id();
      finish(attempt, &reply.response);
      return reply.response;
    }
    const bool transient = is_transient_status(reply.status);
    if (!transient || attempt >= retry_.max_attempts) {
      finish(attempt, nullptr);
      throw GatewayError(std::string(transient ? "retry budget exhausted" : "permanent failure") +
                             " (status " + std::to_string(reply.status) + "): " + reply.error,
                         reply.status, attempt);
    }
    retries_.fetch_add(1);
    sleeper_(backoff(attempt));
  }
}

}  // namespace cotd
