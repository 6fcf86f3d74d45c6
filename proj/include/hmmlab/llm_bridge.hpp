#pragma once

#include "hmmlab/errors.hpp"

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

namespace hmmlab {

class TransportError : public Error {
 public:
  using Error::Error;
};

class AuthMissing : public Error {
 public:
  using Error::Error;
};

class MalformedResponse : public Error {
 public:
  using Error::Error;
};

enum class TokenSource { Live, Cache, Fixture };
std::string token_source_name(TokenSource source);

// Top-K next-token log-probabilities. Every value is <= 0.
struct TokenDistribution {
  std::map<std::string, double> logprobs;
  TokenSource source = TokenSource::Live;

  bool operator==(const TokenDistribution&) const = default;
};

// Tokenizers usually glue a leading space onto the continuation.
std::string normalize_token(const std::string& token);

// Anything that can hand back a next-token distribution for a prompt.
class CompletionSource {
 public:
  virtual ~CompletionSource() = default;
  virtual TokenDistribution next_token_distribution(const std::string& prompt) = 0;
};

struct EndpointConfig {
  std::string base_url;     // empty: offline, fixture and cache only
  std::string model_id;
  std::string api_key_env;  // empty: no Authorization header
  int top_logprobs = 20;
  double timeout_seconds = 30.0;
  int max_inflight = 4;
  int max_attempts = 3;
  int backoff_ms = 250;  // doubled after each failed attempt
  std::filesystem::path cache_dir;
  std::filesystem::path fixture_path;
  std::filesystem::path record_path;  // every answered prompt is kept for a fixture written here

  void validate() const;
  // A fixture path that does not exist yet, together with an endpoint, means
  // record into it rather than replay from it.
  void resolve_fixture_mode();
};

std::string sha256_hex(const std::string& data);

// Fixture file: a JSON object with a format tag and one entry per prompt.
struct FixtureEntry {
  std::string prompt_hash;
  std::string prompt;
  std::map<std::string, double> top_logprobs;
  std::string model_id;
  std::string timestamp;
};

class Fixture {
 public:
  static constexpr const char* kFormat = "hmmlab.llm-fixture/1";

  static Fixture load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;  // atomic

  void add(FixtureEntry entry);
  const FixtureEntry* find_prompt(const std::string& prompt) const;
  const std::vector<FixtureEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<FixtureEntry> entries_;
  std::unordered_map<std::string, std::size_t> by_hash_;
};

// Lookup order: fixture, then cache (memory, then cache_dir), then the live
// endpoint. Safe to share between threads.
class LlmBridge : public CompletionSource {
 public:
  explicit LlmBridge(EndpointConfig config);

  TokenDistribution next_token_distribution(const std::string& prompt) override;
  // Always goes to the endpoint; the result still lands in the cache.
  TokenDistribution fetch_live(const std::string& prompt);

  const EndpointConfig& config() const { return config_; }
  bool has_fixture() const { return fixture_.has_value(); }
  bool can_go_live() const { return !config_.base_url.empty(); }

  // Prompts answered live or from cache since construction, when record_path is set.
  Fixture recorded() const;

  // Test hooks.
  int peak_inflight() const { return peak_inflight_.load(); }
  int live_requests() const { return live_requests_.load(); }

 private:
  std::string cache_key(const std::string& prompt) const;
  std::optional<TokenDistribution> cache_lookup(const std::string& key);
  void cache_store(const std::string& key, const TokenDistribution& dist);
  TokenDistribution post_completion(const std::string& prompt);

  EndpointConfig config_;
  std::optional<Fixture> fixture_;
  std::shared_mutex cache_mutex_;
  std::unordered_map<std::string, std::map<std::string, double>> cache_;
  mutable std::mutex record_mutex_;
  std::map<std::string, std::map<std::string, double>> recorded_;
  std::unique_ptr<std::counting_semaphore<>> slots_;
  std::atomic<int> inflight_{0};
  std::atomic<int> peak_inflight_{0};
  std::atomic<int> live_requests_{0};
};

// Queries the live endpoint for every prompt and writes a fixture. Nothing is
// written if any request fails.
Fixture record_fixture(const EndpointConfig& config, const std::vector<std::string>& prompts,
                       const std::filesystem::path& out);

// Keeps the K most likely tokens.
std::map<std::string, double> truncate_top_k(const std::map<std::string, double>& logprobs, int k);

}  // namespace hmmlab
