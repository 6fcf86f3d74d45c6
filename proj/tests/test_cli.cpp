// Drives the hmmlab binary end to end through the shell.

#include "hmmlab/params_io.hpp"
#include "hmmlab/sampler.hpp"
#include "mock_server.hpp"

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace hmmlab;
using namespace testing_support;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "hmmlab_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// returns the exit status; stdout goes to <dir>/stdout.txt, stderr to <dir>/stderr.txt
int cli(const fs::path& dir, const std::string& args) {
  const std::string cmd = std::string("'") + HMMLAB_CLI_PATH + "' " + args + " >'" + (dir / "stdout.txt").string() +
                          "' 2>'" + (dir / "stderr.txt").string() + "'";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

json small_run_config(const fs::path& out) {
  return {{"schema", "hmmlab.experiment/1"},
          {"settings", json::array({{{"id", "a"}, {"synth", {{"M", 3}, {"L", 3}, {"lambda2", 0.6}, {"H_B", 0.5}}}},
                                    {{"id", "b"}, {"synth", {{"M", 2}, {"L", 2}, {"lambda2", 0.9}, {"H_B", 0.3}}}}})},
          {"n_sequences", 24},
          {"seq_length", 65},
          {"context_grid", {4, 16, 64}},
          {"methods", {"viterbi", "bigram", {{"type", "truncated_forward"}, {"k", 4}}}},
          {"master_seed", 3},
          {"output_dir", out.string()}};
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

}  // namespace

TEST(Cli, SynthWritesParamsAndReport) {
  const auto dir = fresh_dir("synth");
  write_json(dir / "spec.json", {{"M", 4}, {"L", 3}, {"lambda2", 0.75}, {"H_B", 0.6}, {"seed", 11}});
  ASSERT_EQ(cli(dir, "synth --config '" + (dir / "spec.json").string() + "' --out '" + (dir / "p.json").string() + "'"),
            0)
      << slurp(dir / "stderr.txt");
  const HmmParams p = read_params(dir / "p.json");
  EXPECT_EQ(p.num_states(), 4);
  EXPECT_EQ(p.num_obs(), 3);
  const json report = json::parse(slurp(dir / "p.report.json"));
  EXPECT_TRUE(report.contains("analysis"));
  EXPECT_TRUE(report.contains("synthesis_report"));

  // same seed, same params; different seed, different params
  ASSERT_EQ(cli(dir, "synth --config '" + (dir / "spec.json").string() + "' --out '" + (dir / "q.json").string() + "'"), 0);
  EXPECT_EQ(slurp(dir / "p.json"), slurp(dir / "q.json"));
  ASSERT_EQ(cli(dir, "synth --config '" + (dir / "spec.json").string() + "' --seed 12 --out '" +
                         (dir / "r.json").string() + "'"),
            0);
  EXPECT_NE(slurp(dir / "p.json"), slurp(dir / "r.json"));
}

TEST(Cli, SampleWritesBatchAndSequenceFile) {
  const auto dir = fresh_dir("sample");
  HmmParams p;
  p.initial = Eigen::Vector2d(1.0, 0.0);
  p.transition = Eigen::Matrix2d::Zero();
  p.transition << 0, 1, 1, 0;
  p.emission = Eigen::Matrix2d::Identity();
  write_params(p, dir / "flip.json");
  ASSERT_EQ(cli(dir, "sample --params '" + (dir / "flip.json").string() + "' --out '" + (dir / "b.txt").string() +
                         "' -n 5 -T 6 --threads 3 --sequences-out '" + (dir / "seqs.txt").string() + "'"),
            0)
      << slurp(dir / "stderr.txt");
  const TrajectoryBatch b = read_batch(dir / "b.txt");
  EXPECT_EQ(b.num_sequences(), 5);
  EXPECT_EQ(b.length(), 6);
  std::string expected;
  for (int i = 0; i < 5; ++i) expected += "1 2 1 2 1 2\n";
  EXPECT_EQ(slurp(dir / "seqs.txt"), expected);
}

TEST(Cli, RunIsDeterministicAcrossThreadCounts) {
  const auto dir = fresh_dir("run_threads");
  write_json(dir / "cfg.json", small_run_config(dir / "unused"));
  const std::string cfg = "'" + (dir / "cfg.json").string() + "'";
  ASSERT_EQ(cli(dir, "run --config " + cfg + " --threads 1 --out '" + (dir / "t1").string() + "'"), 0)
      << slurp(dir / "stderr.txt");
  ASSERT_EQ(cli(dir, "run --config " + cfg + " --threads 8 --out '" + (dir / "t8").string() + "'"), 0);
  for (const char* f : {"curves.csv", "summary.json"}) {
    const std::string a = slurp(dir / "t1" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, slurp(dir / "t8" / f)) << f;
  }
  EXPECT_TRUE(fs::exists(dir / "t1" / "manifest.json"));
  EXPECT_FALSE(fs::exists(dir / "unused"));

  ASSERT_EQ(cli(dir, "run --config " + cfg + " --seed 4 --out '" + (dir / "s4").string() + "'"), 0);
  EXPECT_NE(slurp(dir / "t1" / "curves.csv"), slurp(dir / "s4" / "curves.csv"));
  EXPECT_EQ(json::parse(slurp(dir / "s4" / "manifest.json")).at("master_seed"), 4);
}

TEST(Cli, RunExitCodes) {
  const auto dir = fresh_dir("run_codes");
  json c = small_run_config(dir / "partial");
  c["settings"].push_back({{"id", "gone"}, {"params_file", "does_not_exist.json"}});
  write_json(dir / "partial.json", c);
  EXPECT_EQ(cli(dir, "run --config '" + (dir / "partial.json").string() + "'"), 2);
  const json manifest = json::parse(slurp(dir / "partial" / "manifest.json"));
  EXPECT_EQ(manifest.at("exit_code"), 2);
  EXPECT_EQ(manifest.at("failed_settings").size(), 1u);

  json bad = small_run_config(dir / "bad");
  bad["no_such_key"] = 1;
  write_json(dir / "bad.json", bad);
  EXPECT_EQ(cli(dir, "run --config '" + (dir / "bad.json").string() + "'"), 1);
  EXPECT_NE(slurp(dir / "stderr.txt").find("config error"), std::string::npos);

  std::ofstream(dir / "garbage.json") << "{not json";
  EXPECT_EQ(cli(dir, "run --config '" + (dir / "garbage.json").string() + "'"), 1);

  EXPECT_NE(cli(dir, "run --config '" + (dir / "partial.json").string() + "' --codec hex"), 0);
  EXPECT_NE(cli(dir, "run --config '" + (dir / "partial.json").string() + "' --threads 0"), 0);
  EXPECT_NE(cli(dir, "frobnicate"), 0);
  EXPECT_NE(cli(dir, ""), 0);
}

TEST(Cli, IclRecordAndOfflineReplayWithCodecOverride) {
  const auto dir = fresh_dir("icl");
  HmmParams p;
  p.initial = Eigen::Vector3d::Constant(1.0 / 3);
  p.transition = Eigen::Matrix3d::Zero();
  p.transition << 0, 1, 0, 0, 0, 1, 1, 0, 0;
  p.emission = Eigen::Matrix3d::Identity();
  write_params(p, dir / "cycle.json");
  json c = small_run_config(dir / "unused");
  c["settings"] = {{{"id", "cycle"}, {"params_file", (dir / "cycle.json").string()}}};
  c["methods"] = {"viterbi", {{"type", "icl"}, {"codec", "abc"}}};
  c["n_sequences"] = 4;
  c["context_grid"] = {4, 8};
  write_json(dir / "cfg.json", c);
  const std::string cfg = "'" + (dir / "cfg.json").string() + "'";
  const std::string fx = "'" + (dir / "fx.json").string() + "'";

  {
    MockCompletionServer server(MockCompletionServer::induction_responder());
    ASSERT_EQ(cli(dir, "run --config " + cfg + " --codec digits --llm-endpoint " + server.base_url() +
                           " --llm-fixture " + fx + " --out '" + (dir / "rec").string() + "'"),
              0)
        << slurp(dir / "stderr.txt");
    ASSERT_FALSE(server.requests().empty());
    // digits codec: symbols arrive as 0..2
    const std::string prompt = server.requests().front().body.at("prompt");
    EXPECT_EQ(prompt.find_first_not_of("012 "), std::string::npos) << prompt;
  }
  ASSERT_TRUE(fs::exists(dir / "fx.json"));

  ASSERT_EQ(cli(dir, "run --config " + cfg + " --codec digits --llm-fixture " + fx + " --out '" +
                         (dir / "replay").string() + "'"),
            0)
      << slurp(dir / "stderr.txt");
  EXPECT_EQ(slurp(dir / "rec" / "curves.csv"), slurp(dir / "replay" / "curves.csv"));
  const json s = json::parse(slurp(dir / "replay" / "summary.json")).at("settings")[0];
  EXPECT_EQ(s.at("methods").at("icl_digits").at("epsilon_gap"), 0.0);

  ASSERT_EQ(cli(dir, "report '" + (dir / "replay").string() + "'"), 0);
  const std::string report = slurp(dir / "stdout.txt");
  EXPECT_NE(report.find("icl_digits"), std::string::npos) << report;
  EXPECT_NE(report.find("source=fixture("), std::string::npos) << report;
}

TEST(Cli, IngestAndReport) {
  const auto dir = fresh_dir("ingest");
  std::ofstream(dir / "trials.csv") << "animal,stimulus,choice,reward\n"
                                       "m1,L,L,1\nm1,R,L,0\nm1,L,L,1\n"
                                       "m2,R,R,1\nm2,R,R,1\n";
  ASSERT_EQ(cli(dir, "ingest --input '" + (dir / "trials.csv").string() +
                         "' --mask stimulus+choice+reward --group animal --out '" + (dir / "seqs.txt").string() + "'"),
            0)
      << slurp(dir / "stderr.txt");
  EXPECT_EQ(slurp(dir / "seqs.txt"), "1 2 1\n3 3\n");
  EXPECT_TRUE(fs::exists(dir / "seqs.txt.alphabet.csv") || fs::exists(dir / "seqs.alphabet.csv"));

  EXPECT_EQ(cli(dir, "ingest --input '" + (dir / "trials.csv").string() + "' --mask stimulus+colour --out '" +
                         (dir / "x.txt").string() + "'"),
            1);

  // run on the ingested sequences, then summarize
  json c = small_run_config(dir / "run");
  c["settings"] = {{{"id", "mice"}, {"sequences_file", (dir / "seqs.txt").string()}, {"L", 3}}};
  c["methods"] = {"bigram", {{"type", "ngram"}, {"n", 1}}};
  c["context_grid"] = {1, 2};
  write_json(dir / "cfg.json", c);
  ASSERT_EQ(cli(dir, "run --config '" + (dir / "cfg.json").string() + "'"), 0) << slurp(dir / "stderr.txt");
  ASSERT_EQ(cli(dir, "report '" + (dir / "run").string() + "' --out '" + (dir / "csvs").string() + "'"), 0)
      << slurp(dir / "stderr.txt");
  EXPECT_NE(slurp(dir / "stdout.txt").find("mice"), std::string::npos);
  EXPECT_FALSE(fs::is_empty(dir / "csvs"));

  EXPECT_EQ(cli(dir, "report '" + (dir / "nowhere").string() + "'"), 1);
}
