#include "hmmlab/sampler.hpp"

#include "hmmlab/errors.hpp"
#include "hmmlab/parallel.hpp"
#include "hmmlab/rng.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hmmlab {

TrajectoryBatch::TrajectoryBatch(std::string setting_id, std::uint64_t seed, int num_states, int num_obs,
                                 int num_sequences, int length)
    : setting_id_(std::move(setting_id)),
      seed_(seed),
      num_states_(num_states),
      num_obs_(num_obs),
      num_sequences_(num_sequences),
      length_(length),
      states_(std::size_t(num_sequences) * std::size_t(length)),
      observations_(std::size_t(num_sequences) * std::size_t(length)) {}

TrajectoryBatch sample_batch(const HmmParams& params, int num_sequences, int length, std::uint64_t seed,
                             std::string setting_id, int threads) {
  if (num_sequences < 1 || length < 1) {
    throw std::invalid_argument("sample_batch: n and T must be positive");
  }
  require_valid(params);
  TrajectoryBatch batch(std::move(setting_id), seed, params.num_states(), params.num_obs(), num_sequences,
                        length);

  // Row-major copies so categorical draws read contiguous memory.
  const int m = params.num_states();
  const int l = params.num_obs();
  std::vector<double> pi(params.initial.data(), params.initial.data() + m);
  std::vector<double> a(std::size_t(m) * m);
  std::vector<double> b(std::size_t(m) * l);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) a[std::size_t(i) * m + j] = params.transition(i, j);
    for (int j = 0; j < l; ++j) b[std::size_t(i) * l + j] = params.emission(i, j);
  }

  parallel_for(std::size_t(num_sequences), threads, [&](std::size_t i) {
    Rng rng(derive_seed(seed, i));
    auto states = batch.mutable_states(int(i));
    auto obs = batch.mutable_observations(int(i));
    int x = rng.categorical(pi);
    for (int t = 0; t < length; ++t) {
      if (t > 0) x = rng.categorical(std::span(a).subspan(std::size_t(x) * m, std::size_t(m)));
      states[t] = x;
      obs[t] = rng.categorical(std::span(b).subspan(std::size_t(x) * l, std::size_t(l)));
    }
  });
  return batch;
}

namespace {

constexpr const char* kBatchMagic = "# hmmlab trajectory batch v1";

void write_rows(std::ostream& os, const TrajectoryBatch& batch, bool states) {
  for (int i = 0; i < batch.num_sequences(); ++i) {
    const auto row = states ? batch.states(i) : batch.observations(i);
    for (int t = 0; t < batch.length(); ++t) {
      if (t) os << ' ';
      os << row[t] + 1;
    }
    os << '\n';
  }
}

void read_rows(std::istream& is, std::span<Symbol> (TrajectoryBatch::*row)(int), TrajectoryBatch& batch,
               int alphabet) {
  for (int i = 0; i < batch.num_sequences(); ++i) {
    auto out = (batch.*row)(i);
    for (int t = 0; t < batch.length(); ++t) {
      int v = 0;
      if (!(is >> v)) throw ParseError("batch file: truncated symbol rows");
      if (v < 1 || v > alphabet) throw ParseError("batch file: symbol out of range");
      out[t] = v - 1;
    }
  }
}

std::string expect_key(std::istream& is, const std::string& key) {
  std::string line;
  if (!std::getline(is, line) || line.rfind(key + "=", 0) != 0) {
    throw ParseError("batch file: expected '" + key + "='");
  }
  return line.substr(key.size() + 1);
}

}  // namespace

void write_batch(const TrajectoryBatch& batch, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << kBatchMagic << '\n';
  os << "setting_id=" << batch.setting_id() << '\n';
  os << "seed=" << batch.seed() << '\n';
  os << "M=" << batch.num_states() << '\n';
  os << "L=" << batch.num_obs() << '\n';
  os << "n=" << batch.num_sequences() << '\n';
  os << "T=" << batch.length() << '\n';
  os << "states\n";
  write_rows(os, batch, true);
  os << "observations\n";
  write_rows(os, batch, false);
}

TrajectoryBatch read_batch(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != kBatchMagic) throw ParseError("batch file: unsupported header '" + line + "'");
  std::string id = expect_key(is, "setting_id");
  const std::uint64_t seed = std::stoull(expect_key(is, "seed"));
  const int m = std::stoi(expect_key(is, "M"));
  const int l = std::stoi(expect_key(is, "L"));
  const int n = std::stoi(expect_key(is, "n"));
  const int len = std::stoi(expect_key(is, "T"));
  TrajectoryBatch batch(std::move(id), seed, m, l, n, len);
  std::string marker;
  is >> marker;
  if (marker != "states") throw ParseError("batch file: missing states section");
  read_rows(is, &TrajectoryBatch::mutable_states, batch, m);
  is >> marker;
  if (marker != "observations") throw ParseError("batch file: missing observations section");
  read_rows(is, &TrajectoryBatch::mutable_observations, batch, l);
  return batch;
}

void write_sequences(const std::vector<SymbolSeq>& sequences, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& seq : sequences) {
    for (std::size_t t = 0; t < seq.size(); ++t) {
      if (t) os << ' ';
      os << seq[t] + 1;
    }
    os << '\n';
  }
}

std::vector<SymbolSeq> read_sequences(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<SymbolSeq> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    SymbolSeq seq;
    std::string tok;
    while (ls >> tok) {
      std::size_t used = 0;
      int v = 0;
      try {
        v = std::stoi(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size() || v < 1) {
        throw ParseError("sequence file line " + std::to_string(line_no) + ": bad symbol '" + tok + "'");
      }
      seq.push_back(v - 1);
    }
    if (!seq.empty()) out.push_back(std::move(seq));
  }
  return out;
}

std::vector<SymbolSeq> batch_observations(const TrajectoryBatch& batch) {
  std::vector<SymbolSeq> out;
  out.reserve(std::size_t(batch.num_sequences()));
  for (int i = 0; i < batch.num_sequences(); ++i) {
    const auto row = batch.observations(i);
    out.emplace_back(row.begin(), row.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// TokenCodec

const std::vector<std::string>& TokenCodec::special_tokens() {
  static const std::vector<std::string> tokens = {"!", "@", "#", "$", "%", "^", "&", "*", "(",
                                                  ")", "-", "+", "=", "~", "?", "<", ">", "[",
                                                  "]", "{", "}", "|", ";", ":", ",", "."};
  return tokens;
}

int TokenCodec::capacity(CodecScheme scheme) {
  switch (scheme) {
    case CodecScheme::Abc: return 26;
    case CodecScheme::Digits: return 10;
    case CodecScheme::RandomSpecial: return int(special_tokens().size());
  }
  return 0;
}

CodecScheme TokenCodec::parse_scheme(const std::string& name) {
  if (name == "abc") return CodecScheme::Abc;
  if (name == "digits" || name == "123") return CodecScheme::Digits;
  if (name == "random" || name == "random_special") return CodecScheme::RandomSpecial;
  throw std::invalid_argument("unknown codec '" + name + "' (expected abc, digits or random)");
}

std::string TokenCodec::scheme_name(CodecScheme scheme) {
  switch (scheme) {
    case CodecScheme::Abc: return "abc";
    case CodecScheme::Digits: return "digits";
    case CodecScheme::RandomSpecial: return "random";
  }
  return "";
}

TokenCodec::TokenCodec(CodecScheme scheme, int num_obs, std::string separator)
    : scheme_(scheme), separator_(std::move(separator)) {
  if (num_obs < 1) throw std::invalid_argument("TokenCodec: alphabet must be nonempty");
  if (num_obs > capacity(scheme)) {
    throw AlphabetTooLarge("codec " + scheme_name(scheme) + " supports at most " +
                           std::to_string(capacity(scheme)) + " symbols, got " + std::to_string(num_obs));
  }
  for (int s = 0; s < num_obs; ++s) {
    switch (scheme) {
      case CodecScheme::Abc: tokens_.emplace_back(1, char('A' + s)); break;
      case CodecScheme::Digits: tokens_.emplace_back(1, char('0' + s)); break;
      case CodecScheme::RandomSpecial: tokens_.push_back(special_tokens()[std::size_t(s)]); break;
    }
  }
}

std::string TokenCodec::encode(SymbolView observations) const {
  check_symbols(observations, num_obs());
  std::string out;
  for (std::size_t i = 0; i < observations.size(); ++i) {
    if (i) out += separator_;
    out += tokens_[std::size_t(observations[i])];
  }
  return out;
}

Symbol TokenCodec::lookup(const std::string& token) const {
  for (std::size_t s = 0; s < tokens_.size(); ++s) {
    if (tokens_[s] == token) return Symbol(s);
  }
  return -1;
}

SymbolSeq TokenCodec::decode(const std::string& text) const {
  SymbolSeq out;
  if (text.empty()) return out;
  std::vector<std::string> parts;
  if (separator_.empty()) {
    for (char c : text) parts.emplace_back(1, c);
  } else {
    std::size_t start = 0;
    for (;;) {
      const std::size_t pos = text.find(separator_, start);
      parts.push_back(text.substr(start, pos - start));
      if (pos == std::string::npos) break;
      start = pos + separator_.size();
    }
  }
  for (const auto& p : parts) {
    const Symbol s = lookup(p);
    if (s < 0) throw ParseError("codec " + scheme_name(scheme_) + ": unknown token '" + p + "'");
    out.push_back(s);
  }
  return out;
}

}  // namespace hmmlab
