#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include <cstdlib>
#include <random>
#include <regex>
#include <thread>

#include "calkit/errors.hpp"
#include "calkit/model_client.hpp"
#include "calkit/util.hpp"

namespace calkit {
namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw DomainError("unsupported endpoint URL: " + url);
  return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

HttpTransport::HttpTransport(ClientConfig config)
    : config_(std::move(config)), jitter_state_(hash_combine(config_.jitter_seed, 0x6a6974746572ULL)) {
  config_.validate();
}

Json HttpTransport::post(const std::string& url, const Json& body) {
  const SplitUrl target = split_url(url);
  httplib::Client client(target.origin);
  const auto secs = config_.timeout.count() / 1000;
  const auto usecs = (config_.timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers headers;
  if (!config_.auth_token_env.empty()) {
    if (const char* token = std::getenv(config_.auth_token_env.c_str()); token && *token)
      headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  const std::string payload = body.dump();
  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      double jitter;
      {
        std::lock_guard lock(jitter_mutex_);
        jitter_state_ = hash_combine(jitter_state_, static_cast<std::uint64_t>(attempt));
        jitter = static_cast<double>(jitter_state_ >> 11) * 0x1.0p-53;
      }
      const double delay = static_cast<double>(config_.backoff_base.count()) * std::ldexp(1.0, attempt - 1) *
                           (0.5 + jitter);
      std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long long>(delay)));
    }
    auto res = client.Post(target.path, headers, payload, "application/json");
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 200 && res->status < 300) {
      try {
        return Json::parse(res->body);
      } catch (const Json::parse_error& e) {
        throw TransportError(std::string("server returned malformed JSON: ") + e.what());
      }
    }
    last_error = "HTTP " + std::to_string(res->status);
    if (!retryable_status(res->status)) break;
  }
  throw TransportError(url + ": " + last_error);
}

}  // namespace calkit
