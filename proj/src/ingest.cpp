#include "hmmlab/ingest.hpp"

#include "hmmlab/errors.hpp"
#include "hmmlab/params_io.hpp"
#include "hmmlab/sampler.hpp"

#include <boost/tokenizer.hpp>

#include <fstream>
#include <istream>
#include <map>
#include <sstream>

namespace hmmlab {

namespace {

std::vector<std::string> parse_csv_line(const std::string& line) {
  using Tokenizer = boost::tokenizer<boost::escaped_list_separator<char>>;
  std::string clean = line;
  if (!clean.empty() && clean.back() == '\r') clean.pop_back();
  std::vector<std::string> out;
  try {
    Tokenizer tok(clean, boost::escaped_list_separator<char>('\\', ',', '"'));
    for (const auto& field : tok) out.push_back(field);
  } catch (const boost::escaped_list_error& e) {
    throw ParseError(std::string("csv: ") + e.what());
  }
  return out;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::vector<std::string> split_mask(const std::string& mask) {
  std::vector<std::string> out;
  std::string part;
  for (char c : mask) {
    if (c == '+' || c == ',') {
      if (!part.empty()) out.push_back(part);
      part.clear();
    } else {
      part += c;
    }
  }
  if (!part.empty()) out.push_back(part);
  return out;
}

IngestedData ingest_csv(std::istream& csv, const IngestOptions& options) {
  if (options.mask.empty()) throw std::invalid_argument("ingest: mask names no columns");
  std::string line;
  if (!std::getline(csv, line)) throw ParseError("csv: missing header row");
  const std::vector<std::string> header = parse_csv_line(line);
  auto column = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw UnknownColumn("ingest: no column named '" + name + "'");
  };
  std::vector<std::size_t> cols;
  for (const auto& name : options.mask) cols.push_back(column(name));
  const bool grouped = !options.group_column.empty();
  const std::size_t group_col = grouped ? column(options.group_column) : 0;

  IngestedData out;
  out.mask = options.mask;
  std::map<std::string, Symbol> symbol_of;
  std::map<std::string, std::size_t> group_of;
  int line_no = 1;
  while (std::getline(csv, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> fields = parse_csv_line(line);
    if (fields.size() != header.size()) {
      throw ParseError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " fields, got " + std::to_string(fields.size()));
    }
    std::string token;
    for (std::size_t k = 0; k < cols.size(); ++k) {
      if (k) token += options.joiner;
      token += fields[cols[k]];
    }
    auto [it, fresh] = symbol_of.emplace(token, Symbol(out.alphabet.size()));
    if (fresh) {
      if (int(out.alphabet.size()) >= kMaxIngestAlphabet) {
        throw AlphabetOverflow("ingest: more than " + std::to_string(kMaxIngestAlphabet) + " composite tokens");
      }
      out.alphabet.push_back(token);
    }
    const std::string group = grouped ? fields[group_col] : "all";
    auto [g, new_group] = group_of.emplace(group, out.sequences.size());
    if (new_group) {
      out.ids.push_back(group);
      out.sequences.emplace_back();
    }
    out.sequences[g->second].push_back(it->second);
  }
  return out;
}

IngestedData ingest_file(const std::filesystem::path& csv, const IngestOptions& options) {
  std::ifstream is(csv);
  if (!is) throw std::runtime_error("cannot open " + csv.string());
  return ingest_csv(is, options);
}

void write_ingested(const IngestedData& data, const std::filesystem::path& out) {
  std::ostringstream seqs;
  for (const auto& s : data.sequences) {
    for (std::size_t t = 0; t < s.size(); ++t) seqs << (t ? " " : "") << s[t] + 1;
    seqs << '\n';
  }
  std::ostringstream alphabet;
  alphabet << "symbol,token\n";
  for (std::size_t s = 0; s < data.alphabet.size(); ++s) alphabet << s + 1 << ',' << csv_quote(data.alphabet[s]) << '\n';
  std::ostringstream ids;
  for (const auto& id : data.ids) ids << id << '\n';

  const auto stem = out.parent_path() / out.stem();
  write_file_atomically(out, seqs.str());
  write_file_atomically(std::filesystem::path(stem.string() + ".alphabet.csv"), alphabet.str());
  write_file_atomically(std::filesystem::path(stem.string() + ".ids.txt"), ids.str());
}

}  // namespace hmmlab
