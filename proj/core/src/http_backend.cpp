#include <httplib.h>

#include <regex>

#include "cotd/gateway.hpp"
#include "cotd/serialization.hpp"

namespace cotd {
namespace {

std::atomic<std::uint64_t> g_network_operations{0};

struct EndpointParts {
  std::string origin;  // scheme://host[:port]
  std::string path;    // full request path
};

EndpointParts split_endpoint(const std::string& endpoint) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(endpoint, m, kUrl)) {
    throw std::invalid_argument("endpoint must be an http(s) URL: " + endpoint);
  }
  std::string prefix = m[2].matched ? m[2].str() : std::string();
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  if (prefix.ends_with("/chat/completions")) return {m[1].str(), prefix};
  if (!prefix.ends_with("/v1")) prefix += "/v1";
  return {m[1].str(), prefix + "/chat/completions"};
}

}  // namespace

HttpBackend::HttpBackend(std::string endpoint, std::optional<std::string> api_key,
                         std::chrono::duration<double> timeout)
    : endpoint_(std::move(endpoint)), api_key_(std::move(api_key)), timeout_(timeout) {
  split_endpoint(endpoint_);
}

std::uint64_t HttpBackend::network_operations() { return g_network_operations.load(); }

BackendReply HttpBackend::send(const ChatRequest& request) {
  const auto parts = split_endpoint(endpoint_);
  httplib::Client client(parts.origin);
  const auto timeout_us =
      std::chrono::duration_cast<std::chrono::microseconds>(timeout_).count();
  client.set_connection_timeout(std::chrono::microseconds(timeout_us));
  client.set_read_timeout(std::chrono::microseconds(timeout_us));
  client.set_write_timeout(std::chrono::microseconds(timeout_us));

  httplib::Headers headers;
  if (api_key_ && !api_key_->empty()) headers.emplace("Authorization", "Bearer " + *api_key_);

  g_network_operations.fetch_add(1);
  auto res = client.Post(parts.path, headers, canonical(request_body(request)), "application/json");

  BackendReply reply;
  if (!res) {
    reply.status = 0;
    reply.error = httplib::to_string(res.error());
    return reply;
  }
  reply.status = res->status;
  if (res->status != 200) {
    reply.error = res->body.substr(0, 512);
    return reply;
  }
  try {
    reply.response = response_from_body(json::parse(res->body), endpoint_);
  } catch (const std::exception& e) {
    // A 200 with an unreadable body is not worth retrying.
    reply.status = 422;
    reply.error = std::string("unparseable response body: ") + e.what();
  }
  return reply;
}

}  // namespace cotd
