#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace calkit {

using Json = nlohmann::json;

/// What gets sent to a model for one question.
///
/// `image_url` is either an http(s) URL or a data: URI with base64 content.
/// `tags` annotate the request locally (record id, gold index, sweep cell...)
/// for mocks, simulators and logs; they are never put on the wire.
struct PromptPayload {
  std::string text;
  std::optional<std::string> image_url;
  std::map<std::string, std::string> tags;

  std::optional<std::string> tag(const std::string& key) const;
};

/// The single boundary to anything that answers questions.
///
/// Public entry points check preconditions and forward to the do_* hooks.
/// Implementations must be safe to call from several threads.
class ModelClient {
 public:
  virtual ~ModelClient() = default;

  // K finite per-option logits aligned with `options`.
  std::vector<double> query_options(const PromptPayload& payload, std::span<const std::string> options);

  // n completions, in the order the server produced them.
  std::vector<std::string> sample_answers(const PromptPayload& payload, std::size_t n,
                                          double temperature = 1.0, double top_p = 0.95);

 protected:
  virtual std::vector<double> do_query_options(const PromptPayload& payload,
                                               std::span<const std::string> options) = 0;
  virtual std::vector<std::string> do_sample_answers(const PromptPayload& payload, std::size_t n,
                                                     double temperature, double top_p) = 0;
};

enum class OptionLogitStrategy {
  first_token,    // top_logprobs of the first answer token, matched to option letters
  forced_option,  // one echo-scored completion per option letter
};

std::string_view to_string(OptionLogitStrategy s);

struct ClientConfig {
  std::string endpoint;              // full chat-completions URL
  std::string completions_endpoint;  // for forced_option scoring; derived from endpoint if empty
  std::string model;
  std::string auth_token_env;        // name of the env var holding the token, never the token
  std::chrono::milliseconds timeout{60000};
  int max_retries = 3;
  std::size_t max_in_flight = 4;
  std::chrono::milliseconds backoff_base{250};
  std::uint64_t jitter_seed = 0;
  OptionLogitStrategy strategy = OptionLogitStrategy::first_token;
  bool forced_fallback = true;  // first_token falls back to forced_option when letters are missing
  std::size_t top_logprobs = 20;

  void validate() const;
  // CALKIT_ENDPOINT, CALKIT_MODEL, CALKIT_TOKEN_ENV, CALKIT_TIMEOUT_MS, CALKIT_MAX_RETRIES
  static ClientConfig from_env();
};

/// Moves one JSON request to a server and returns its JSON response.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual Json post(const std::string& url, const Json& body) = 0;
};

/// cpp-httplib transport with retries (exponential backoff + seeded jitter)
/// and bearer auth read from the configured env var at call time.
class HttpTransport : public Transport {
 public:
  explicit HttpTransport(ClientConfig config);
  Json post(const std::string& url, const Json& body) override;

 private:
  ClientConfig config_;
  std::mutex jitter_mutex_;
  std::uint64_t jitter_state_;
};

/// Serves responses from a replay log ({request, response, timestamp} per
/// line). Identical requests are answered in recorded order. Never touches
/// the network.
class ReplayTransport : public Transport {
 public:
  explicit ReplayTransport(const std::string& log_path);
  Json post(const std::string& url, const Json& body) override;
  std::size_t remaining() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::deque<Json>> responses_;
};

/// Appends every exchange of the wrapped transport to a replay log.
/// Only request/response bodies are logged; auth headers never are.
class RecordingTransport : public Transport {
 public:
  RecordingTransport(std::shared_ptr<Transport> inner, std::string log_path);
  Json post(const std::string& url, const Json& body) override;

 private:
  std::shared_ptr<Transport> inner_;
  std::string log_path_;
  std::mutex mutex_;
};

// Canonical replay key: the request body as compact JSON with sorted keys.
// The URL is logged but not matched, so a log replays without an endpoint.
std::string replay_key(const Json& body);

/// JSON-over-HTTP chat-completion client.
class HttpModelClient : public ModelClient {
 public:
  HttpModelClient(ClientConfig config, std::shared_ptr<Transport> transport);

  Json chat_request(const PromptPayload& payload, double temperature, double top_p, std::size_t n,
                    bool want_logprobs) const;

 protected:
  std::vector<double> do_query_options(const PromptPayload& payload,
                                       std::span<const std::string> options) override;
  std::vector<std::string> do_sample_answers(const PromptPayload& payload, std::size_t n,
                                             double temperature, double top_p) override;

 private:
  Json post(const std::string& url, const Json& body);
  std::vector<double> forced_option_logits(const PromptPayload& payload, std::size_t k);

  ClientConfig config_;
  std::shared_ptr<Transport> transport_;
  std::counting_semaphore<1024> in_flight_;
};

// Builds the client described by `config`, optionally recording to or
// replaying from `replay_log`.
std::shared_ptr<ModelClient> make_http_client(const ClientConfig& config,
                                              const std::string& record_log = {},
                                              const std::string& replay_log = {});

// --- deterministic mocks -------------------------------------------------

/// Returns the same logits for every question; samples echo `answer`.
class FixedLogitsClient : public ModelClient {
 public:
  explicit FixedLogitsClient(std::vector<double> logits, std::string answer = "A");
  std::size_t calls() const { return calls_; }

 protected:
  std::vector<double> do_query_options(const PromptPayload&, std::span<const std::string>) override;
  std::vector<std::string> do_sample_answers(const PromptPayload&, std::size_t n, double, double) override;

 private:
  std::vector<double> logits_;
  std::string answer_;
  std::atomic<std::size_t> calls_{0};
};

/// Delegates to caller-supplied functions; counts calls. Unset handlers throw CapabilityError.
class FunctionClient : public ModelClient {
 public:
  using OptionsFn = std::function<std::vector<double>(const PromptPayload&, std::span<const std::string>)>;
  using SampleFn = std::function<std::vector<std::string>(const PromptPayload&, std::size_t, double, double)>;

  FunctionClient(OptionsFn on_options, SampleFn on_sample);
  std::size_t option_calls() const { return option_calls_; }
  std::size_t sample_calls() const { return sample_calls_; }

 protected:
  std::vector<double> do_query_options(const PromptPayload&, std::span<const std::string>) override;
  std::vector<std::string> do_sample_answers(const PromptPayload&, std::size_t, double, double) override;

 private:
  OptionsFn on_options_;
  SampleFn on_sample_;
  std::atomic<std::size_t> option_calls_{0};
  std::atomic<std::size_t> sample_calls_{0};
};

}  // namespace calkit
