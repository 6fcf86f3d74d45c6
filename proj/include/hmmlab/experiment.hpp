#pragma once

#include "hmmlab/llm_bridge.hpp"
#include "hmmlab/metrics.hpp"
#include "hmmlab/synth.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace hmmlab {

inline constexpr const char* kConfigSchema = "hmmlab.experiment/1";
inline constexpr const char* kArtifactVersion = "hmmlab-artifacts/1";
inline constexpr const char* kCurvesHeader =
    "setting_id,method,context_len,accuracy,acc_std,mean_hellinger,hell_std,n_samples";

struct SettingEntry {
  enum class Source { Synth, ParamsFile, SequencesFile };
  std::string id;
  Source source = Source::Synth;
  SynthesisSpec spec;        // Synth
  bool seed_given = false;   // spec.seed came from the config
  std::filesystem::path file;  // ParamsFile / SequencesFile
  int num_obs = 0;           // SequencesFile: 0 infers max symbol
  int num_states = 0;        // SequencesFile: state count for learned methods
};

struct ExperimentConfig {
  std::vector<SettingEntry> settings;
  int n_sequences = 256;
  int seq_length = 2049;  // one past the last grid point
  std::vector<int> context_grid{4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048};
  std::vector<MethodSpec> methods;
  std::string reference_method = "viterbi";
  std::filesystem::path output_dir = "hmmlab_out";
  std::uint64_t master_seed = 0;
  int threads = 1;
  SynthesisOptions synthesis;
  EndpointConfig llm;
  nlohmann::json echo;  // config as given, for the manifest

  bool llm_configured() const { return !llm.base_url.empty() || !llm.fixture_path.empty(); }
  // Throws ConfigError on broken invariants.
  void check() const;
};

// Unknown keys are rejected. Relative paths resolve against base_dir.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

MethodSpec parse_method(const nlohmann::json& doc);
SynthesisSpec parse_synthesis_spec(const nlohmann::json& doc);

struct RunOverrides {
  std::optional<std::filesystem::path> output_dir;
  std::optional<std::uint64_t> master_seed;
  std::optional<int> threads;
  std::optional<std::string> llm_endpoint;
  std::optional<std::filesystem::path> llm_fixture;
  std::optional<CodecScheme> codec;
};

void apply_overrides(ExperimentConfig& config, const RunOverrides& overrides);

struct RunResult {
  int exit_code = 0;  // 0 full success, 2 some settings failed
  int settings_ok = 0;
  std::vector<std::string> failed_settings;
  std::vector<std::string> skipped_methods;
};

// Writes curves.csv, summary.json and manifest.json into config.output_dir.
RunResult run_experiment(const ExperimentConfig& config, std::ostream& log);

// One CSV row, fixed formatting.
std::string format_curve_row(const std::string& setting_id, const CurvePoint& point);

// Seeds below a setting's seed.
enum class SeedStream : std::uint64_t { Synthesis = 0, Sampling = 1, Evaluation = 2 };
std::uint64_t setting_seed(std::uint64_t master_seed, std::size_t index);
std::uint64_t stream_seed(std::uint64_t setting_seed, SeedStream stream);

}  // namespace hmmlab
