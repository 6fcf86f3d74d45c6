#include "hmmlab/errors.hpp"
#include "hmmlab/sampler.hpp"
#include "support.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <fstream>

using namespace hmmlab;
using namespace testing_support;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "hmmlab_test_sampler";
  std::filesystem::create_directories(dir);
  return dir / name;
}

HmmParams deterministic_cycle(int m) {
  HmmParams p;
  p.initial = Eigen::VectorXd::Zero(m);
  p.initial(0) = 1.0;
  p.transition = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i) p.transition(i, (i + 1) % m) = 1.0;
  p.emission = Eigen::MatrixXd::Identity(m, m);
  return p;
}

}  // namespace

TEST(SampleBatch, DeterministicModelHasOneTrajectory) {
  const HmmParams p = deterministic_cycle(3);
  const TrajectoryBatch b = sample_batch(p, 5, 10, 42);
  for (int i = 0; i < 5; ++i) {
    for (int t = 0; t < 10; ++t) {
      EXPECT_EQ(b.states(i)[t], t % 3);
      EXPECT_EQ(b.observations(i)[t], t % 3);
    }
  }
}

TEST(SampleBatch, IdentityEmissionCopiesStates) {
  std::mt19937_64 g(1);
  HmmParams p = random_hmm(4, 4, g);
  p.emission = Eigen::MatrixXd::Identity(4, 4);
  const TrajectoryBatch b = sample_batch(p, 8, 200, 7);
  for (int i = 0; i < 8; ++i) {
    for (int t = 0; t < 200; ++t) EXPECT_EQ(b.states(i)[t], b.observations(i)[t]);
  }
}

TEST(SampleBatch, PrefixStableAcrossBatchSizeAndThreads) {
  std::mt19937_64 g(2);
  const HmmParams p = random_hmm(3, 5, g);
  const TrajectoryBatch small = sample_batch(p, 7, 64, 123, "x", 1);
  const TrajectoryBatch big = sample_batch(p, 40, 64, 123, "x", 4);
  for (int i = 0; i < 7; ++i) {
    for (int t = 0; t < 64; ++t) {
      ASSERT_EQ(small.states(i)[t], big.states(i)[t]);
      ASSERT_EQ(small.observations(i)[t], big.observations(i)[t]);
    }
  }
  EXPECT_TRUE(sample_batch(p, 40, 64, 123, "x", 1) == big);
  EXPECT_FALSE(sample_batch(p, 40, 64, 124, "x", 1) == big);
}

TEST(SampleBatch, SymbolsInRangeProperty) {
  std::mt19937_64 g(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const int m = 1 + trial % 5;
    const int l = 1 + trial % 7;
    const HmmParams p = random_hmm(m, l, g, 0.3);
    const TrajectoryBatch b = sample_batch(p, 2, 30, std::uint64_t(trial));
    for (int i = 0; i < 2; ++i) {
      for (int t = 0; t < 30; ++t) {
        ASSERT_GE(b.states(i)[t], 0);
        ASSERT_LT(b.states(i)[t], m);
        ASSERT_GE(b.observations(i)[t], 0);
        ASSERT_LT(b.observations(i)[t], l);
        // zero-probability moves never happen
        ASSERT_GT(p.emission(b.states(i)[t], b.observations(i)[t]), 0.0);
        if (t) {
          ASSERT_GT(p.transition(b.states(i)[t - 1], b.states(i)[t]), 0.0);
        }
      }
      ASSERT_GT(p.initial(b.states(i)[0]), 0.0);
    }
  }
}

TEST(SampleBatch, Preconditions) {
  const HmmParams p = deterministic_cycle(2);
  EXPECT_THROW(sample_batch(p, 0, 5, 1), std::invalid_argument);
  EXPECT_THROW(sample_batch(p, 3, 0, 1), std::invalid_argument);
}

// One-step transitions of a long chain against A with a chi-square test per
// row. At level 0.001 the expected pass rate is 99.9%; require 99% of 100 runs.
TEST(SampleBatch, ChiSquareTransitions) {
  std::mt19937_64 g(4);
  const HmmParams p = random_hmm(3, 2, g);
  int passed = 0;
  const int runs = 100;
  for (int run = 0; run < runs; ++run) {
    const TrajectoryBatch b = sample_batch(p, 1, 20000, std::uint64_t(1000 + run));
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(3, 3);
    for (int t = 1; t < b.length(); ++t) counts(b.states(0)[t - 1], b.states(0)[t]) += 1.0;
    double stat = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double n = counts.row(i).sum();
      for (int j = 0; j < 3; ++j) {
        const double e = n * p.transition(i, j);
        stat += (counts(i, j) - e) * (counts(i, j) - e) / e;
      }
    }
    boost::math::chi_squared_distribution<double> chi(3 * 2);
    const double pval = 1.0 - boost::math::cdf(chi, stat);
    passed += pval > 0.001;
  }
  EXPECT_GE(passed, 99);
}

TEST(SampleBatch, UnigramMatchesStationaryEmission) {
  std::mt19937_64 g(5);
  const HmmParams p = random_hmm(8, 8, g);
  const TrajectoryBatch b = sample_batch(p, 4096, 2048, 77, "", 4);
  const int burn = 100;
  Eigen::VectorXd freq = Eigen::VectorXd::Zero(8);
  for (int i = 0; i < b.num_sequences(); ++i) {
    for (int t = burn; t < b.length(); ++t) freq(b.observations(i)[t]) += 1.0;
  }
  freq /= freq.sum();
  const Eigen::VectorXd law = (solve_stationary(p.transition).transpose() * p.emission).transpose();
  EXPECT_LE(0.5 * (freq - law).lpNorm<1>(), 0.01);
}

TEST(BatchFile, RoundTrip) {
  std::mt19937_64 g(6);
  const HmmParams p = random_hmm(3, 4, g);
  const TrajectoryBatch b = sample_batch(p, 6, 17, 9, "setting-a");
  const auto path = temp_path("batch.txt");
  write_batch(b, path);
  const TrajectoryBatch back = read_batch(path);
  EXPECT_TRUE(back == b);
  EXPECT_EQ(back.setting_id(), "setting-a");
  EXPECT_EQ(back.seed(), 9u);

  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "# hmmlab trajectory batch v1");
}

TEST(BatchFile, RejectsCorruption) {
  const auto path = temp_path("bad_batch.txt");
  std::ofstream(path) << "# hmmlab trajectory batch v1\nsetting_id=a\nseed=1\nM=2\nL=2\nn=1\nT=3\nstates\n1 2 3\n";
  EXPECT_THROW(read_batch(path), ParseError);
  std::ofstream(path) << "# something else\n";
  EXPECT_THROW(read_batch(path), ParseError);
}

TEST(SequenceFile, OneBasedRoundTrip) {
  const std::vector<SymbolSeq> seqs = {{0, 1, 2}, {3}, {2, 2, 0, 1, 1}};
  const auto path = temp_path("seqs.txt");
  write_sequences(seqs, path);
  std::ifstream is(path);
  std::string first;
  std::getline(is, first);
  EXPECT_EQ(first, "1 2 3");
  EXPECT_EQ(read_sequences(path), seqs);
}

TEST(SequenceFile, BadTokens) {
  const auto path = temp_path("bad_seqs.txt");
  std::ofstream(path) << "1 2 x\n";
  EXPECT_THROW(read_sequences(path), ParseError);
  std::ofstream(path) << "1 0 2\n";
  EXPECT_THROW(read_sequences(path), ParseError);
  std::ofstream(path) << "\n1 2\n\n3\n";
  EXPECT_EQ(read_sequences(path).size(), 2u);
}

TEST(Codec, Examples) {
  const SymbolSeq abab{0, 1, 0, 1};
  EXPECT_EQ(TokenCodec(CodecScheme::Abc, 2).encode(abab), "ABAB");
  const SymbolSeq s01{0, 1};
  EXPECT_EQ(TokenCodec(CodecScheme::Digits, 2).encode(s01), "01");
  const SymbolSeq s1234{0, 1, 2, 3};
  EXPECT_EQ(TokenCodec(CodecScheme::RandomSpecial, 4).encode(s1234), "!@#$");
}

TEST(Codec, CapacityLimits) {
  EXPECT_THROW(TokenCodec(CodecScheme::Abc, 27), AlphabetTooLarge);
  EXPECT_THROW(TokenCodec(CodecScheme::Digits, 11), AlphabetTooLarge);
  EXPECT_NO_THROW(TokenCodec(CodecScheme::Digits, 10));
  EXPECT_THROW(TokenCodec(CodecScheme::RandomSpecial, int(TokenCodec::special_tokens().size()) + 1),
               AlphabetTooLarge);
  const SymbolSeq out_of_range{0, 5};
  EXPECT_THROW(TokenCodec(CodecScheme::Abc, 3).encode(out_of_range), SymbolOutOfRange);
}

TEST(Codec, SpecialTableIsInjective) {
  const auto& t = TokenCodec::special_tokens();
  EXPECT_EQ(std::set<std::string>(t.begin(), t.end()).size(), t.size());
}

TEST(Codec, ParseScheme) {
  EXPECT_EQ(TokenCodec::parse_scheme("abc"), CodecScheme::Abc);
  EXPECT_EQ(TokenCodec::parse_scheme("digits"), CodecScheme::Digits);
  EXPECT_EQ(TokenCodec::parse_scheme("random"), CodecScheme::RandomSpecial);
  EXPECT_THROW(TokenCodec::parse_scheme("emoji"), std::invalid_argument);
}

TEST(Codec, RoundTripProperty) {
  std::mt19937_64 g(7);
  const std::vector<CodecScheme> schemes = {CodecScheme::Abc, CodecScheme::Digits, CodecScheme::RandomSpecial};
  const std::vector<std::string> separators = {"", " ", ", "};
  for (int trial = 0; trial < 1000; ++trial) {
    const CodecScheme scheme = schemes[std::size_t(trial % 3)];
    const int l = 1 + int(g() % std::uint64_t(TokenCodec::capacity(scheme)));
    const TokenCodec codec(scheme, l, separators[std::size_t(trial / 3 % 3)]);
    const SymbolSeq s = random_sequence(int(g() % 40), l, g);
    ASSERT_EQ(codec.decode(codec.encode(s)), s);
    for (int v = 0; v < l; ++v) ASSERT_EQ(codec.lookup(codec.token(v)), v);
  }
}

TEST(Codec, DecodeRejectsForeignTokens) {
  EXPECT_THROW(TokenCodec(CodecScheme::Abc, 3).decode("ABZ"), ParseError);
  EXPECT_EQ(TokenCodec(CodecScheme::Abc, 3).lookup("Z"), -1);
}
