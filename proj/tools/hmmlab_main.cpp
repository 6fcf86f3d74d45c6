// hmmlab: synthesize HMMs, sample trajectories, run prediction benchmarks,
// ingest behavioral CSV data and summarize run directories.

#include "hmmlab/errors.hpp"
#include "hmmlab/experiment.hpp"
#include "hmmlab/ingest.hpp"
#include "hmmlab/params_io.hpp"
#include "hmmlab/report.hpp"
#include "hmmlab/sampler.hpp"
#include "hmmlab/synth.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <iostream>

namespace {

using namespace hmmlab;
using nlohmann::json;

int cmd_synth(const std::string& config, const std::string& out, std::optional<std::uint64_t> seed) {
  json doc;
  try {
    doc = json::parse(read_file(config));
  } catch (const std::exception& e) {
    throw ConfigError(config + ": " + e.what());
  }
  // accept either a bare spec or {"synth": spec}
  SynthesisSpec spec = parse_synthesis_spec(doc.contains("synth") ? doc.at("synth") : doc);
  if (seed) spec.seed = *seed;
  const Setting s = build_setting(spec);
  write_params(s.params, out);
  const json report = {{"spec", spec_to_json(spec)},
                       {"analysis", analysis_to_json(s.analysis)},
                       {"synthesis_report", report_to_json(s.report)}};
  const std::filesystem::path out_path(out);
  write_file_atomically(out_path.parent_path() / (out_path.stem().string() + ".report.json"), report.dump(2) + "\n");
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_sample(const std::string& params_file, const std::string& out, std::uint64_t seed, int n, int length,
               int threads, const std::string& sequences_out) {
  const HmmParams params = read_params(params_file);
  const TrajectoryBatch batch =
      sample_batch(params, n, length, seed, std::filesystem::path(params_file).stem().string(), threads);
  write_batch(batch, out);
  if (!sequences_out.empty()) write_sequences(batch_observations(batch), sequences_out);
  std::cerr << "wrote " << n << " x " << length << " trajectories to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hmmlab: next-observation prediction benchmarks on hidden Markov models"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string llm_endpoint;
  std::string llm_fixture;
  std::string codec;

  auto* synth = app.add_subcommand("synth", "synthesis spec -> params file and report");
  synth->add_option("--config", config, "JSON synthesis spec")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out, "params file to write")->required();
  synth->add_option("--seed", seed, "override the spec seed");

  std::string params_file;
  int n_sequences = 256;
  int length = 2048;
  std::string sequences_out;
  auto* sample = app.add_subcommand("sample", "params file -> trajectory batch file");
  sample->add_option("--params", params_file, "params JSON file")->required()->check(CLI::ExistingFile);
  sample->add_option("--out", out, "batch file to write")->required();
  sample->add_option("--seed", seed, "sampling seed (default 0)");
  sample->add_option("-n,--n-sequences", n_sequences, "number of sequences")->check(CLI::PositiveNumber);
  sample->add_option("-T,--length", length, "sequence length")->check(CLI::PositiveNumber);
  sample->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  sample->add_option("--sequences-out", sequences_out, "also write observations, one sequence per line");

  auto* run = app.add_subcommand("run", "experiment config -> curves.csv, summary.json, manifest.json");
  run->add_option("--config", config, "JSON experiment config")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "output directory (overrides config)");
  run->add_option("--seed", seed, "master seed (overrides config)");
  run->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  run->add_option("--llm-endpoint", llm_endpoint, "base URL of a completions endpoint");
  run->add_option("--llm-fixture", llm_fixture, "recorded fixture file for offline ICL");
  run->add_option("--codec", codec, "ICL codec")->check(CLI::IsMember({"abc", "digits", "random"}));

  std::string input;
  std::string mask;
  std::string group;
  auto* ingest = app.add_subcommand("ingest", "CSV trials -> sequence file");
  ingest->add_option("--input", input, "CSV file with a header row")->required()->check(CLI::ExistingFile);
  ingest->add_option("--mask", mask, "columns to compose, e.g. stimulus+choice+reward")->required();
  ingest->add_option("--group", group, "column splitting trials into sequences (e.g. animal id)");
  ingest->add_option("--out", out, "sequence file to write")->required();

  std::string run_dir;
  auto* report = app.add_subcommand("report", "run directory -> summary table");
  report->add_option("dir", run_dir, "run output directory")->required();
  report->add_option("--out", out, "directory for per-setting curve CSVs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(config, out, seed);
    if (*sample) return cmd_sample(params_file, out, seed.value_or(0), n_sequences, length, threads.value_or(1),
                                   sequences_out);
    if (*run) {
      ExperimentConfig cfg = load_config(config);
      RunOverrides o;
      if (!out.empty()) o.output_dir = out;
      o.master_seed = seed;
      o.threads = threads;
      if (!llm_endpoint.empty()) o.llm_endpoint = llm_endpoint;
      if (!llm_fixture.empty()) o.llm_fixture = llm_fixture;
      if (!codec.empty()) o.codec = TokenCodec::parse_scheme(codec);
      apply_overrides(cfg, o);
      const RunResult r = run_experiment(cfg, std::cerr);
      for (const auto& s : r.skipped_methods) std::cerr << "skipped " << s << "\n";
      std::cerr << r.settings_ok << " settings ok, " << r.failed_settings.size() << " failed; artifacts in "
                << cfg.output_dir.string() << "\n";
      return r.exit_code;
    }
    if (*ingest) {
      IngestOptions opts;
      opts.mask = split_mask(mask);
      opts.group_column = group;
      const IngestedData data = ingest_file(input, opts);
      write_ingested(data, out);
      std::cerr << data.sequences.size() << " sequences, alphabet size " << data.alphabet.size() << "\n";
      return 0;
    }
    if (*report) {
      std::cout << render_report(run_dir, out);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
