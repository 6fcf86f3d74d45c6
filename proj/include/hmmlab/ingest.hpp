#pragma once

#include "hmmlab/hmm.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace hmmlab {

inline constexpr int kMaxIngestAlphabet = 256;

struct IngestOptions {
  std::vector<std::string> mask;  // columns composed into each symbol, in this order
  std::string group_column;       // one sequence per distinct value; empty = one sequence
  std::string joiner = "|";
};

struct IngestedData {
  std::vector<std::string> ids;        // group values, in order of first appearance
  std::vector<SymbolSeq> sequences;    // 0-based symbols
  std::vector<std::string> alphabet;   // alphabet[s] is the composite token of symbol s
  std::vector<std::string> mask;
};

// CSV with a header row. Symbols are numbered by first appearance of their
// composite token. Throws UnknownColumn and AlphabetOverflow.
IngestedData ingest_csv(std::istream& csv, const IngestOptions& options);
IngestedData ingest_file(const std::filesystem::path& csv, const IngestOptions& options);

// Writes the sequence file at out, plus <stem>.alphabet.csv and <stem>.ids.txt
// next to it.
void write_ingested(const IngestedData& data, const std::filesystem::path& out);

std::vector<std::string> split_mask(const std::string& mask);

}  // namespace hmmlab
