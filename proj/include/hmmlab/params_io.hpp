#pragma once

#include "hmmlab/hmm.hpp"
#include "hmmlab/synth.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace hmmlab {

// Params file: {"M": .., "L": .., "pi": [..], "A": [M*M row-major], "B": [M*L row-major]}.
// Nested row arrays are accepted on read.
nlohmann::json params_to_json(const HmmParams& params);
HmmParams params_from_json(const nlohmann::json& doc);
void write_params(const HmmParams& params, const std::filesystem::path& path);
HmmParams read_params(const std::filesystem::path& path);

nlohmann::json vector_to_json(const Eigen::VectorXd& v);
nlohmann::json analysis_to_json(const ChainAnalysis& analysis);
nlohmann::json report_to_json(const SynthesisReport& report);
nlohmann::json spec_to_json(const SynthesisSpec& spec);

// Writes to a sibling temp file, then renames over path.
void write_file_atomically(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

}  // namespace hmmlab
