#include "hmmlab/llm_bridge.hpp"

#include "hmmlab/params_io.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <openssl/sha.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>
#include <thread>

namespace hmmlab {

using nlohmann::json;

namespace {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::map<std::string, double> logprobs_from_json(const json& obj, const char* where) {
  if (!obj.is_object()) throw MalformedResponse(std::string(where) + ": top_logprobs is not an object");
  std::map<std::string, double> out;
  for (const auto& [token, value] : obj.items()) {
    if (!value.is_number()) throw MalformedResponse(std::string(where) + ": non-numeric logprob");
    double lp = value.get<double>();
    if (lp > 1e-9) throw MalformedResponse(std::string(where) + ": positive logprob for '" + token + "'");
    out[token] = std::min(lp, 0.0);
  }
  return out;
}

struct UrlParts {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path before /v1/completions, no trailing slash
};

UrlParts split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw std::invalid_argument("base_url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  UrlParts parts;
  parts.origin = url.substr(0, path_start);
  if (path_start != std::string::npos) parts.prefix = url.substr(path_start);
  while (!parts.prefix.empty() && parts.prefix.back() == '/') parts.prefix.pop_back();
  return parts;
}

class InflightGuard {
 public:
  InflightGuard(std::counting_semaphore<>& slots, std::atomic<int>& inflight, std::atomic<int>& peak)
      : slots_(slots), inflight_(inflight) {
    slots_.acquire();
    const int now = ++inflight_;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
  }
  ~InflightGuard() {
    --inflight_;
    slots_.release();
  }
  InflightGuard(const InflightGuard&) = delete;
  InflightGuard& operator=(const InflightGuard&) = delete;

 private:
  std::counting_semaphore<>& slots_;
  std::atomic<int>& inflight_;
};

}  // namespace

std::string token_source_name(TokenSource source) {
  switch (source) {
    case TokenSource::Live: return "live";
    case TokenSource::Cache: return "cache";
    case TokenSource::Fixture: return "fixture";
  }
  return "";
}

std::string normalize_token(const std::string& token) {
  const auto first = token.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = token.find_last_not_of(" \t\r\n");
  return token.substr(first, last - first + 1);
}

void EndpointConfig::validate() const {
  if (top_logprobs < 1) throw std::invalid_argument("top_logprobs must be >= 1");
  if (max_inflight < 1) throw std::invalid_argument("max_inflight must be >= 1");
  if (max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
  if (!(timeout_seconds > 0.0)) throw std::invalid_argument("timeout must be positive");
  if (!base_url.empty()) split_url(base_url);
}

void EndpointConfig::resolve_fixture_mode() {
  if (fixture_path.empty() || base_url.empty() || std::filesystem::exists(fixture_path)) return;
  record_path = fixture_path;
  fixture_path.clear();
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(data.data()), data.size(), digest);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * SHA256_DIGEST_LENGTH);
  for (unsigned char c : digest) {
    out += hex[c >> 4];
    out += hex[c & 15];
  }
  return out;
}

std::map<std::string, double> truncate_top_k(const std::map<std::string, double>& logprobs, int k) {
  if (int(logprobs.size()) <= k) return logprobs;
  std::vector<std::pair<std::string, double>> items(logprobs.begin(), logprobs.end());
  // ties resolved by token text so the cut is deterministic
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return {items.begin(), items.begin() + k};
}

// ---------------------------------------------------------------------------
// Fixture

void Fixture::add(FixtureEntry entry) {
  const auto it = by_hash_.find(entry.prompt_hash);
  if (it != by_hash_.end()) {
    entries_[it->second] = std::move(entry);
    return;
  }
  by_hash_[entry.prompt_hash] = entries_.size();
  entries_.push_back(std::move(entry));
}

const FixtureEntry* Fixture::find_prompt(const std::string& prompt) const {
  const auto it = by_hash_.find(sha256_hex(prompt));
  return it == by_hash_.end() ? nullptr : &entries_[it->second];
}

Fixture Fixture::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open fixture " + path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ParseError("fixture " + path.string() + ": " + e.what());
  }
  if (doc.value("format", "") != kFormat) throw ParseError("fixture " + path.string() + ": unsupported format");
  Fixture fx;
  for (const auto& e : doc.at("entries")) {
    FixtureEntry entry;
    entry.prompt = e.at("prompt").get<std::string>();
    entry.prompt_hash = e.at("prompt_hash").get<std::string>();
    if (entry.prompt_hash != sha256_hex(entry.prompt)) {
      throw ParseError("fixture " + path.string() + ": hash does not match prompt text");
    }
    entry.top_logprobs = logprobs_from_json(e.at("top_logprobs"), "fixture");
    entry.model_id = e.value("model_id", "");
    entry.timestamp = e.value("timestamp", "");
    fx.add(std::move(entry));
  }
  return fx;
}

void Fixture::save(const std::filesystem::path& path) const {
  json entries = json::array();
  for (const auto& e : entries_) {
    entries.push_back({{"prompt_hash", e.prompt_hash},
                       {"prompt", e.prompt},
                       {"top_logprobs", e.top_logprobs},
                       {"model_id", e.model_id},
                       {"timestamp", e.timestamp}});
  }
  const json doc = {{"format", kFormat}, {"entries", entries}};
  write_file_atomically(path, doc.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// LlmBridge

LlmBridge::LlmBridge(EndpointConfig config) : config_(std::move(config)) {
  config_.validate();
  if (!config_.fixture_path.empty()) fixture_ = Fixture::load(config_.fixture_path);
  slots_ = std::make_unique<std::counting_semaphore<>>(config_.max_inflight);
}

std::string LlmBridge::cache_key(const std::string& prompt) const {
  return sha256_hex(config_.model_id + '\n' + std::to_string(config_.top_logprobs) + '\n' + prompt);
}

std::optional<TokenDistribution> LlmBridge::cache_lookup(const std::string& key) {
  {
    std::shared_lock lock(cache_mutex_);
    const auto it = cache_.find(key);
    if (it != cache_.end()) return TokenDistribution{it->second, TokenSource::Cache};
  }
  if (config_.cache_dir.empty()) return std::nullopt;
  const auto file = config_.cache_dir / (key + ".json");
  std::ifstream is(file);
  if (!is) return std::nullopt;
  std::map<std::string, double> logprobs;
  try {
    logprobs = logprobs_from_json(json::parse(is).at("top_logprobs"), "cache");
  } catch (const std::exception&) {
    return std::nullopt;  // a corrupt entry is refetched
  }
  std::unique_lock lock(cache_mutex_);
  cache_[key] = logprobs;
  return TokenDistribution{std::move(logprobs), TokenSource::Cache};
}

void LlmBridge::cache_store(const std::string& key, const TokenDistribution& dist) {
  {
    std::unique_lock lock(cache_mutex_);
    cache_[key] = dist.logprobs;
  }
  if (config_.cache_dir.empty()) return;
  const json doc = {{"model_id", config_.model_id}, {"top_logprobs", dist.logprobs}};
  // per-thread temp name so concurrent writers of one key do not collide
  std::ostringstream tmp_name;
  tmp_name << key << ".json." << std::this_thread::get_id();
  const auto tmp = config_.cache_dir / tmp_name.str();
  std::filesystem::create_directories(config_.cache_dir);
  {
    std::ofstream os(tmp);
    os << doc.dump() << '\n';
  }
  std::filesystem::rename(tmp, config_.cache_dir / (key + ".json"));
}

TokenDistribution LlmBridge::next_token_distribution(const std::string& prompt) {
  if (fixture_) {
    if (const FixtureEntry* hit = fixture_->find_prompt(prompt)) {
      return {truncate_top_k(hit->top_logprobs, config_.top_logprobs), TokenSource::Fixture};
    }
  }
  const std::string key = cache_key(prompt);
  std::optional<TokenDistribution> answer = cache_lookup(key);
  if (!answer) {
    if (!can_go_live()) {
      throw TransportError("no endpoint configured and prompt not found in fixture or cache");
    }
    answer = fetch_live(prompt);
  }
  if (!config_.record_path.empty()) {
    std::lock_guard lock(record_mutex_);
    recorded_[prompt] = answer->logprobs;
  }
  return *answer;
}

Fixture LlmBridge::recorded() const {
  std::lock_guard lock(record_mutex_);
  Fixture fx;
  const std::string stamp = utc_timestamp();
  for (const auto& [prompt, logprobs] : recorded_) {
    fx.add({sha256_hex(prompt), prompt, logprobs, config_.model_id, stamp});
  }
  return fx;
}

TokenDistribution LlmBridge::fetch_live(const std::string& prompt) {
  TokenDistribution dist = post_completion(prompt);
  cache_store(cache_key(prompt), dist);
  return dist;
}

TokenDistribution LlmBridge::post_completion(const std::string& prompt) {
  if (!can_go_live()) throw TransportError("no endpoint configured");
  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (!key || !*key) throw AuthMissing("environment variable " + config_.api_key_env + " is not set");
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const json body = {{"model", config_.model_id},
                     {"prompt", prompt},
                     {"max_tokens", 1},
                     {"logprobs", config_.top_logprobs},
                     {"temperature", 0}};
  const std::string payload = body.dump();
  const UrlParts url = split_url(config_.base_url);
  const std::string path = url.prefix + "/v1/completions";
  const auto timeout = std::chrono::duration<double>(config_.timeout_seconds);
  const auto timeout_us = std::chrono::duration_cast<std::chrono::microseconds>(timeout);

  std::string last_error;
  int delay_ms = config_.backoff_ms;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    if (attempt > 1) {
      std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      delay_ms *= 2;
    }
    httplib::Result res;
    {
      InflightGuard guard(*slots_, inflight_, peak_inflight_);
      ++live_requests_;
      httplib::Client client(url.origin);
      client.set_connection_timeout(timeout_us);
      client.set_read_timeout(timeout_us);
      client.set_write_timeout(timeout_us);
      res = client.Post(path, headers, payload, "application/json");
    }
    if (!res) {
      last_error = "connection failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw TransportError("HTTP " + std::to_string(res->status) + " from " + config_.base_url + ": " +
                           res->body.substr(0, 200));
    }
    json doc;
    try {
      doc = json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw MalformedResponse(std::string("response is not JSON: ") + e.what());
    }
    const json* top = nullptr;
    try {
      top = &doc.at("choices").at(0).at("logprobs").at("top_logprobs").at(0);
    } catch (const json::exception&) {
      throw MalformedResponse("response lacks choices[0].logprobs.top_logprobs[0]");
    }
    return {truncate_top_k(logprobs_from_json(*top, "response"), config_.top_logprobs), TokenSource::Live};
  }
  throw TransportError("giving up after " + std::to_string(config_.max_attempts) + " attempts: " + last_error);
}

Fixture record_fixture(const EndpointConfig& config, const std::vector<std::string>& prompts,
                       const std::filesystem::path& out) {
  EndpointConfig live = config;
  live.fixture_path.clear();
  live.cache_dir.clear();
  LlmBridge bridge(live);
  Fixture fx;
  for (const auto& prompt : prompts) {
    const TokenDistribution dist = bridge.fetch_live(prompt);
    fx.add({sha256_hex(prompt), prompt, dist.logprobs, config.model_id, utc_timestamp()});
  }
  fx.save(out);
  return fx;
}

}  // namespace hmmlab
