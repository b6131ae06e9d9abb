#include <algorithm>
#include <thread>

#include "cotd/digest.hpp"
#include "cotd/gateway.hpp"
#include "cotd/rng.hpp"
#include "cotd/serialization.hpp"

namespace cotd {
namespace {

std::string searchable_text(const ChatRequest& request) {
  std::string text;
  for (const auto& m : request.messages) {
    text += m.content;
    text += '\n';
    for (const auto& a : m.attachments) {
      text += a.uri;
      text += '\n';
    }
  }
  return text;
}

int approx_tokens(std::string_view s) {
  return static_cast<int>(std::count(s.begin(), s.end(), ' ')) + (s.empty() ? 0 : 1);
}

}  // namespace

MockBackend::MockBackend(MockScript script, std::uint64_t seed)
    : script_(std::move(script)), seed_(seed) {}

const MockRule* MockBackend::match(const ChatRequest& request) const {
  const std::string text = searchable_text(request);
  const MockRule* best = nullptr;
  for (const auto& rule : script_.rules) {
    if (text.find(rule.contains) == std::string::npos) continue;
    if (!best || rule.priority > best->priority) best = &rule;
  }
  return best;
}

BackendReply MockBackend::send(const ChatRequest& request) {
  calls_.fetch_add(1);
  const int now = in_flight_.fetch_add(1) + 1;
  int seen = max_in_flight_.load();
  while (now > seen && !max_in_flight_.compare_exchange_weak(seen, now)) {
  }
  struct Leave {
    std::atomic<int>& counter;
    ~Leave() { counter.fetch_sub(1); }
  } leave{in_flight_};

  if (script_.latency.count() > 0) std::this_thread::sleep_for(script_.latency);

  BackendReply reply;
  const std::size_t cursor = injected_cursor_.fetch_add(1);
  if (cursor < script_.injected_statuses.size()) {
    reply.status = script_.injected_statuses[cursor];
    reply.error = "injected status";
    return reply;
  }

  const std::string body = canonical(request_body(request));
  const std::uint64_t seed = splitmix64(seed_ ^ fnv1a64(body));
  std::vector<std::string> choices;
  const MockRule* rule = match(request);
  if (rule && rule->generator) {
    choices = rule->generator(request, seed);
  } else {
    const auto& pool = rule ? rule->completions : script_.default_completions;
    for (int i = 0; i < request.n; ++i) {
      choices.push_back(pool.empty() ? std::string() : pool[static_cast<std::size_t>(i) % pool.size()]);
    }
  }
  reply.response.choices = std::move(choices);
  reply.response.backend_id = script_.id;
  reply.response.usage.prompt_tokens = approx_tokens(searchable_text(request));
  for (const auto& c : reply.response.choices) reply.response.usage.completion_tokens += approx_tokens(c);
  return reply;
}

std::shared_ptr<MockBackend> mock_program(MockScript script, std::uint64_t seed) {
  const auto& rules = script.rules;
  for (std::size_t i = 0; i < rules.size(); ++i) {
    for (std::size_t j = i + 1; j < rules.size(); ++j) {
      if (rules[i].priority != rules[j].priority) continue;
      const auto& a = rules[i].contains;
      const auto& b = rules[j].contains;
      if (a.find(b) != std::string::npos || b.find(a) != std::string::npos) {
        throw std::invalid_argument("mock rules '" + a + "' and '" + b +
                                    "' overlap with equal priority");
      }
    }
  }
  return std::make_shared<MockBackend>(std::move(script), seed);
}

ReplayBackend::ReplayBackend(const std::vector<AuditRecord>& records) {
  for (const auto& r : records) {
    if (r.response.is_null()) continue;
    entries_.emplace_back(r.request_digest, response_from_body(r.response, r.backend_id));
  }
  used_.assign(entries_.size(), false);
}

std::shared_ptr<ReplayBackend> ReplayBackend::from_file(const std::filesystem::path& path) {
  std::vector<AuditRecord> records;
  for (const auto& j : read_jsonl(path)) records.push_back(audit_record_from_json(j));
  return std::make_shared<ReplayBackend>(records);
}

BackendReply ReplayBackend::send(const ChatRequest& request) {
  const std::string digest = request_digest(request);
  std::lock_guard lock(mu_);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (!used_[i] && entries_[i].first == digest) {
      used_[i] = true;
      return BackendReply{200, entries_[i].second, {}};
    }
  }
  BackendReply miss;
  miss.status = 404;
  miss.error = "no recorded response for request " + digest;
  return miss;
}

}  // namespace cotd
