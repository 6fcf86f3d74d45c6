#pragma once

#include "hmmlab/hmm.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hmmlab {

// n sampled (state, observation) sequence pairs of common length T.
// Symbols are stored 0-based, row-major.
class TrajectoryBatch {
  template <typename V>
  static auto row_of(V& data, int i, int length) {
    return std::span(data.data() + std::size_t(i) * std::size_t(length), std::size_t(length));
  }

 public:
  TrajectoryBatch() = default;
  TrajectoryBatch(std::string setting_id, std::uint64_t seed, int num_states, int num_obs,
                  int num_sequences, int length);

  const std::string& setting_id() const { return setting_id_; }
  std::uint64_t seed() const { return seed_; }
  int num_states() const { return num_states_; }
  int num_obs() const { return num_obs_; }
  int num_sequences() const { return num_sequences_; }
  int length() const { return length_; }

  std::span<const Symbol> states(int i) const { return row_of(states_, i, length_); }
  std::span<const Symbol> observations(int i) const { return row_of(observations_, i, length_); }
  std::span<Symbol> mutable_states(int i) { return row_of(states_, i, length_); }
  std::span<Symbol> mutable_observations(int i) { return row_of(observations_, i, length_); }

  bool operator==(const TrajectoryBatch&) const = default;

 private:
  std::string setting_id_;
  std::uint64_t seed_ = 0;
  int num_states_ = 0;
  int num_obs_ = 0;
  int num_sequences_ = 0;
  int length_ = 0;
  std::vector<Symbol> states_;
  std::vector<Symbol> observations_;
};

// x_1 ~ pi, x_{t+1} ~ A[x_t], o_t ~ B[x_t]. Sequence i draws from an mt19937_64
// stream seeded with derive_seed(seed, i), so a prefix of the batch does not
// depend on n. threads <= 1 runs inline.
TrajectoryBatch sample_batch(const HmmParams& params, int num_sequences, int length, std::uint64_t seed,
                             std::string setting_id = "", int threads = 1);

// Versioned text format: header lines, then 1-based state rows and
// observation rows.
void write_batch(const TrajectoryBatch& batch, const std::filesystem::path& path);
TrajectoryBatch read_batch(const std::filesystem::path& path);

// One sequence per line, space-separated 1-based symbols. Lines may differ in
// length; blank lines are skipped on read.
void write_sequences(const std::vector<SymbolSeq>& sequences, const std::filesystem::path& path);
std::vector<SymbolSeq> read_sequences(const std::filesystem::path& path);
std::vector<SymbolSeq> batch_observations(const TrajectoryBatch& batch);

// ---------------------------------------------------------------------------
// Token codecs for LLM prompts.

enum class CodecScheme { Abc, Digits, RandomSpecial };

class TokenCodec {
 public:
  // Throws AlphabetTooLarge when the scheme cannot represent num_obs symbols.
  TokenCodec(CodecScheme scheme, int num_obs, std::string separator = "");

  static CodecScheme parse_scheme(const std::string& name);
  static std::string scheme_name(CodecScheme scheme);
  static int capacity(CodecScheme scheme);
  // The fixed special-character table behind RandomSpecial.
  static const std::vector<std::string>& special_tokens();

  CodecScheme scheme() const { return scheme_; }
  int num_obs() const { return static_cast<int>(tokens_.size()); }
  const std::string& separator() const { return separator_; }
  const std::string& token(Symbol s) const { return tokens_.at(std::size_t(s)); }

  std::string encode(SymbolView observations) const;
  SymbolSeq decode(const std::string& text) const;
  // Symbol for a single token, or -1 when the token is outside the image.
  Symbol lookup(const std::string& token) const;

 private:
  CodecScheme scheme_;
  std::string separator_;
  std::vector<std::string> tokens_;
};

}  // namespace hmmlab
