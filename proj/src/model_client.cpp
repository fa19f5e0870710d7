#include "calkit/model_client.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <limits>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "calkit/errors.hpp"
#include "calkit/record_store.hpp"
#include "calkit/util.hpp"

namespace calkit {

std::optional<std::string> PromptPayload::tag(const std::string& key) const {
  auto it = tags.find(key);
  if (it == tags.end()) return std::nullopt;
  return it->second;
}

std::vector<double> ModelClient::query_options(const PromptPayload& payload,
                                               std::span<const std::string> options) {
  if (options.empty()) throw DomainError("query_options needs K >= 1 options");
  std::vector<double> logits = do_query_options(payload, options);
  if (logits.size() != options.size())
    throw CapabilityError("client returned " + std::to_string(logits.size()) + " logits for " +
                          std::to_string(options.size()) + " options");
  for (double l : logits)
    if (!std::isfinite(l)) throw CapabilityError("client returned a non-finite option logit");
  return logits;
}

std::vector<std::string> ModelClient::sample_answers(const PromptPayload& payload, std::size_t n,
                                                     double temperature, double top_p) {
  if (n == 0) throw DomainError("sample_answers needs n >= 1");
  if (!(temperature > 0.0)) throw DomainError("sampling temperature must be > 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw DomainError("top_p must lie in (0, 1]");
  std::vector<std::string> out = do_sample_answers(payload, n, temperature, top_p);
  if (out.size() < n)
    throw PartialResultError("expected " + std::to_string(n) + " completions, received " +
                                 std::to_string(out.size()),
                             std::move(out));
  out.resize(n);
  return out;
}

std::string_view to_string(OptionLogitStrategy s) {
  return s == OptionLogitStrategy::first_token ? "first_token" : "forced_option";
}

void ClientConfig::validate() const {
  if (endpoint.empty()) throw DomainError("client endpoint is empty");
  if (timeout.count() <= 0) throw DomainError("client timeout must be > 0");
  if (max_retries < 0) throw DomainError("client retries must be >= 0");
  if (max_in_flight == 0 || max_in_flight > 1024) throw DomainError("max in-flight must be in [1, 1024]");
}

ClientConfig ClientConfig::from_env() {
  ClientConfig c;
  auto env = [](const char* name) -> std::string {
    const char* v = std::getenv(name);
    return v ? v : "";
  };
  c.endpoint = env("CALKIT_ENDPOINT");
  c.model = env("CALKIT_MODEL");
  c.auth_token_env = env("CALKIT_TOKEN_ENV");
  if (auto t = env("CALKIT_TIMEOUT_MS"); !t.empty()) c.timeout = std::chrono::milliseconds(std::stoll(t));
  if (auto r = env("CALKIT_MAX_RETRIES"); !r.empty()) c.max_retries = std::stoi(r);
  return c;
}

// --- replay ----------------------------------------------------------------

std::string replay_key(const Json& body) { return body.dump(); }

ReplayTransport::ReplayTransport(const std::string& log_path) {
  std::ifstream in(log_path);
  if (!in) throw IoError("cannot open replay log " + log_path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    Json entry;
    try {
      entry = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(n, std::string("replay log: ") + e.what());
    }
    const Json& req = entry.at("request");
    responses_[replay_key(req.at("body"))].push_back(entry.at("response"));
  }
}

Json ReplayTransport::post(const std::string& url, const Json& body) {
  std::lock_guard lock(mutex_);
  auto it = responses_.find(replay_key(body));
  if (it == responses_.end() || it->second.empty())
    throw TransportError("replay log has no (remaining) response for this request to " + url);
  Json response = std::move(it->second.front());
  it->second.pop_front();
  return response;
}

std::size_t ReplayTransport::remaining() const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& [key, queue] : responses_) n += queue.size();
  return n;
}

RecordingTransport::RecordingTransport(std::shared_ptr<Transport> inner, std::string log_path)
    : inner_(std::move(inner)), log_path_(std::move(log_path)) {}

Json RecordingTransport::post(const std::string& url, const Json& body) {
  Json response = inner_->post(url, body);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ts;
  ts << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  Json entry = {{"request", {{"url", url}, {"body", body}}}, {"response", response}, {"timestamp", ts.str()}};
  std::lock_guard lock(mutex_);
  std::ofstream out(log_path_, std::ios::app);
  if (!out) throw IoError("cannot append to replay log " + log_path_);
  out << entry.dump() << '\n';
  return response;
}

// --- HTTP model client -----------------------------------------------------

namespace {

// "A", " A", "(A", "A." -> 'A'; anything else -> 0
char token_letter(std::string token) {
  std::string t;
  for (char c : token) {
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    if (std::string_view("()[]{}.:,*\"'").find(c) != std::string_view::npos) continue;
    t.push_back(c);
  }
  // sentencepiece / BPE word-boundary markers
  for (std::string_view marker : {"\xE2\x96\x81", "\xC4\xA0"})
    if (t.rfind(marker, 0) == 0) t.erase(0, marker.size());
  if (t.size() != 1 || !std::isalpha(static_cast<unsigned char>(t[0]))) return 0;
  return static_cast<char>(std::toupper(static_cast<unsigned char>(t[0])));
}

std::string derive_completions_url(const std::string& chat_url) {
  const std::string suffix = "/chat/completions";
  if (chat_url.size() >= suffix.size() &&
      chat_url.compare(chat_url.size() - suffix.size(), suffix.size(), suffix) == 0)
    return chat_url.substr(0, chat_url.size() - suffix.size()) + "/completions";
  return chat_url;
}

}  // namespace

HttpModelClient::HttpModelClient(ClientConfig config, std::shared_ptr<Transport> transport)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      in_flight_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(config_.max_in_flight, 1, 1024))) {
  config_.validate();
  if (config_.completions_endpoint.empty()) config_.completions_endpoint = derive_completions_url(config_.endpoint);
}

Json HttpModelClient::post(const std::string& url, const Json& body) {
  in_flight_.acquire();
  try {
    Json r = transport_->post(url, body);
    in_flight_.release();
    return r;
  } catch (...) {
    in_flight_.release();
    throw;
  }
}

Json HttpModelClient::chat_request(const PromptPayload& payload, double temperature, double top_p,
                                   std::size_t n, bool want_logprobs) const {
  Json content;
  if (payload.image_url) {
    content = Json::array({{{"type", "text"}, {"text", payload.text}},
                           {{"type", "image_url"}, {"image_url", {{"url", *payload.image_url}}}}});
  } else {
    content = payload.text;
  }
  Json body = {{"model", config_.model},
               {"messages", Json::array({{{"role", "user"}, {"content", content}}})},
               {"temperature", temperature},
               {"top_p", top_p},
               {"n", n}};
  if (want_logprobs) {
    body["logprobs"] = true;
    body["top_logprobs"] = config_.top_logprobs;
    body["max_tokens"] = 1;
  }
  return body;
}

std::vector<double> HttpModelClient::do_query_options(const PromptPayload& payload,
                                                      std::span<const std::string> options) {
  const std::size_t k = options.size();
  if (k > 26) throw CapabilityError("letter-scored options are limited to K <= 26");
  if (config_.strategy == OptionLogitStrategy::forced_option) return forced_option_logits(payload, k);

  const Json response = post(config_.endpoint, chat_request(payload, 1.0, 1.0, 1, true));
  const Json* top = nullptr;
  try {
    const Json& lp = response.at("choices").at(0).at("logprobs");
    if (!lp.is_null()) top = &lp.at("content").at(0).at("top_logprobs");
  } catch (const Json::exception&) {
    top = nullptr;
  }
  if (top == nullptr || !top->is_array())
    throw CapabilityError("server response carries no per-token logprobs");

  std::vector<double> logits(k, -std::numeric_limits<double>::infinity());
  for (const Json& entry : *top) {
    const char letter = token_letter(entry.value("token", std::string()));
    if (letter == 0) continue;
    const auto idx = static_cast<std::size_t>(letter - 'A');
    if (idx < k) logits[idx] = std::max(logits[idx], entry.at("logprob").get<double>());
  }
  std::string missing;
  for (std::size_t i = 0; i < k; ++i)
    if (!std::isfinite(logits[i])) missing += option_letter(i);
  if (!missing.empty()) {
    if (config_.forced_fallback) return forced_option_logits(payload, k);
    throw CapabilityError("top_logprobs lack option letter(s) " + missing);
  }
  return logits;
}

std::vector<double> HttpModelClient::forced_option_logits(const PromptPayload& payload, std::size_t k) {
  if (payload.image_url) throw CapabilityError("forced-option scoring does not carry images");
  std::vector<double> logits(k);
  for (std::size_t i = 0; i < k; ++i) {
    Json body = {{"model", config_.model},
                 {"prompt", payload.text + " " + option_letter(i)},
                 {"max_tokens", 0},
                 {"echo", true},
                 {"logprobs", 1},
                 {"temperature", 1.0}};
    const Json response = post(config_.completions_endpoint, body);
    try {
      const Json& tl = response.at("choices").at(0).at("logprobs").at("token_logprobs");
      if (!tl.is_array() || tl.empty() || !tl.back().is_number()) throw CapabilityError("empty token_logprobs");
      logits[i] = tl.back().get<double>();
    } catch (const Json::exception&) {
      throw CapabilityError("completion response carries no echoed token logprobs");
    }
  }
  return logits;
}

std::vector<std::string> HttpModelClient::do_sample_answers(const PromptPayload& payload, std::size_t n,
                                                            double temperature, double top_p) {
  const Json response = post(config_.endpoint, chat_request(payload, temperature, top_p, n, false));
  std::vector<std::string> out;
  try {
    for (const Json& choice : response.at("choices")) {
      const Json& content = choice.at("message").at("content");
      if (content.is_string()) out.push_back(content.get<std::string>());
    }
  } catch (const Json::exception& e) {
    throw TransportError(std::string("malformed chat-completion response: ") + e.what());
  }
  return out;
}

std::shared_ptr<ModelClient> make_http_client(const ClientConfig& config, const std::string& record_log,
                                              const std::string& replay_log) {
  std::shared_ptr<Transport> transport;
  if (!replay_log.empty()) {
    transport = std::make_shared<ReplayTransport>(replay_log);
  } else {
    config.validate();
    transport = std::make_shared<HttpTransport>(config);
    if (!record_log.empty()) transport = std::make_shared<RecordingTransport>(transport, record_log);
  }
  ClientConfig c = config;
  if (c.endpoint.empty()) c.endpoint = "replay://";
  return std::make_shared<HttpModelClient>(c, transport);
}

// --- mocks -------------------------------------------------------------------

FixedLogitsClient::FixedLogitsClient(std::vector<double> logits, std::string answer)
    : logits_(std::move(logits)), answer_(std::move(answer)) {}

std::vector<double> FixedLogitsClient::do_query_options(const PromptPayload&, std::span<const std::string>) {
  ++calls_;
  return logits_;
}

std::vector<std::string> FixedLogitsClient::do_sample_answers(const PromptPayload&, std::size_t n, double,
                                                              double) {
  ++calls_;
  return std::vector<std::string>(n, answer_);
}

FunctionClient::FunctionClient(OptionsFn on_options, SampleFn on_sample)
    : on_options_(std::move(on_options)), on_sample_(std::move(on_sample)) {}

std::vector<double> FunctionClient::do_query_options(const PromptPayload& p, std::span<const std::string> o) {
  ++option_calls_;
  if (!on_options_) throw CapabilityError("mock client has no option handler");
  return on_options_(p, o);
}

std::vector<std::string> FunctionClient::do_sample_answers(const PromptPayload& p, std::size_t n, double t,
                                                           double top_p) {
  ++sample_calls_;
  if (!on_sample_) throw CapabilityError("mock client has no sampling handler");
  return on_sample_(p, n, t, top_p);
}

}  // namespace calkit
