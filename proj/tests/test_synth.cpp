#include "hmmlab/errors.hpp"
#include "hmmlab/synth.hpp"
#include "support.hpp"

#include <boost/math/distributions/beta.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <optional>
#include <set>

using namespace hmmlab;
using namespace testing_support;

TEST(Stationary, UniformMode) {
  EXPECT_TRUE(construct_stationary(4, StationaryMode::uniform()).isApprox(Eigen::Vector4d::Constant(0.25), 1e-15));
}

TEST(Stationary, BetaOneIsUniform) {
  EXPECT_TRUE(construct_stationary(2, StationaryMode::beta_skew(1.0)).isApprox(Eigen::Vector2d(0.5, 0.5), 1e-12));
  EXPECT_TRUE(construct_stationary(7, StationaryMode::beta_skew(1.0)).isApprox(Eigen::VectorXd::Constant(7, 1.0 / 7), 1e-12));
}

TEST(Stationary, BetaThreeMatchesBinMasses) {
  const Eigen::VectorXd mu = construct_stationary(4, StationaryMode::beta_skew(3.0));
  boost::math::beta_distribution<double> dist(1.0, 3.0);
  double total = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double mass = boost::math::cdf(dist, (i + 1) / 4.0) - boost::math::cdf(dist, i / 4.0);
    EXPECT_NEAR(mu(i), mass, 1e-12);
    total += mass;
    if (i) {
      EXPECT_LT(mu(i), mu(i - 1));
    }
    EXPECT_GT(mu(i), 0.0);
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_NEAR(mu.sum(), 1.0, 1e-12);
}

TEST(Stationary, BadArguments) {
  EXPECT_THROW(construct_stationary(0, StationaryMode::uniform()), std::invalid_argument);
  EXPECT_THROW(construct_stationary(3, StationaryMode::beta_skew(0.5)), std::invalid_argument);
}

// Central differences against the analytic gradient at 20 random points per
// configuration. Points near a hinge kink can disagree legitimately, so each
// point is nudged until no hinge argument lies within 1e-4 of zero.
TEST(TransitionObjective, GradientMatchesFiniteDifferences) {
  std::mt19937_64 g(21);
  std::normal_distribution<double> nd(0.0, 1.0);
  struct Case {
    Eigen::VectorXd mu;
    double lambda2;
    std::optional<double> entropy;
  };
  const std::vector<Case> cases = {
      {Eigen::VectorXd::Constant(3, 1.0 / 3), 0.7, std::nullopt},
      {construct_stationary(4, StationaryMode::beta_skew(2.0)), 0.9, 0.8},
      {Eigen::VectorXd::Constant(5, 0.2), 0.5, 1.2},
  };
  for (const auto& c : cases) {
    const TransitionObjective obj(c.mu, c.lambda2, c.entropy);
    int checked = 0;
    while (checked < 20) {
      Eigen::VectorXd theta(obj.num_variables());
      for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = 0.5 * nd(g);
      const Eigen::MatrixXd a = obj.transition(theta);
      // keep away from the kinks of the hinge terms and the entropy floor
      if ((a.array().abs() < 1e-3).any()) continue;
      bool near_kink = false;
      const int m = obj.num_states();
      for (int k = m * (m - 1); k < theta.size(); ++k) {
        if (std::abs(std::abs(theta(k)) - c.lambda2) < 1e-3 || std::abs(theta(k)) < 1e-3) near_kink = true;
      }
      if (near_kink) continue;

      Eigen::VectorXd grad;
      obj.value(theta, &grad);
      Eigen::VectorXd fd(theta.size());
      const double h = 1e-6;
      for (Eigen::Index i = 0; i < theta.size(); ++i) {
        Eigen::VectorXd up = theta, dn = theta;
        up(i) += h;
        dn(i) -= h;
        fd(i) = (obj.value(up) - obj.value(dn)) / (2 * h);
      }
      const double rel = (grad - fd).norm() / std::max({grad.norm(), fd.norm(), 1e-8});
      EXPECT_LE(rel, 1e-4) << "point " << checked;
      ++checked;
    }
  }
}

TEST(TransitionObjective, ExactStructure) {
  // V U = I and mu A = mu hold by construction for any theta
  std::mt19937_64 g(3);
  std::normal_distribution<double> nd(0.0, 1.0);
  const Eigen::VectorXd mu = construct_stationary(5, StationaryMode::beta_skew(2.5));
  const TransitionObjective obj(mu, 0.8, std::nullopt);
  for (int trial = 0; trial < 1000; ++trial) {
    Eigen::VectorXd theta(obj.num_variables());
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = nd(g);
    const Eigen::MatrixXd a = obj.transition(theta);
    EXPECT_LE((a.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-8);
    EXPECT_LE((mu.transpose() * a - mu.transpose()).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(ConstructTransition, TwoStateSymmetricChain) {
  SynthesisSpec spec;
  spec.num_states = 2;
  spec.num_obs = 2;
  spec.target_lambda2 = 0.8;
  spec.seed = 1;
  const TransitionResult r = construct_transition(spec);
  ASSERT_TRUE(r.report.accepted);
  Eigen::Matrix2d expect;
  expect << 0.9, 0.1, 0.1, 0.9;
  EXPECT_LE((r.transition - expect).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_NEAR(mixing_rate(r.transition), 0.8, 1e-3);
  EXPECT_TRUE(stationary_distribution(r.transition).isApprox(Eigen::Vector2d(0.5, 0.5), 1e-4));
}

TEST(ConstructTransition, FourStatesWithEntropyTarget) {
  SynthesisSpec spec;
  spec.num_states = 4;
  spec.num_obs = 4;
  spec.target_lambda2 = 0.75;
  spec.target_transition_entropy = 1.0;
  spec.seed = 5;
  const TransitionResult r = construct_transition(spec);
  ASSERT_TRUE(r.report.accepted);
  const double l2 = mixing_rate(r.transition);
  EXPECT_GE(l2, 0.749);
  EXPECT_LE(l2, 0.751);
  HmmParams p;
  p.transition = r.transition;
  p.emission = Eigen::MatrixXd::Identity(4, 4);
  p.initial = Eigen::VectorXd::Constant(4, 0.25);
  EXPECT_NEAR(entropies(p, stationary_distribution(r.transition)).transition, 1.0, 0.05);
}

TEST(ConstructTransition, Preconditions) {
  SynthesisSpec spec;
  spec.target_lambda2 = 1.0;
  EXPECT_THROW(construct_transition(spec), std::invalid_argument);
  spec.target_lambda2 = 0.5;
  spec.num_states = 1;
  spec.num_obs = 1;
  EXPECT_THROW(construct_transition(spec), std::invalid_argument);
  spec.num_states = 3;
  spec.target_transition_entropy = std::log(3.0) + 0.1;
  EXPECT_THROW(construct_transition(spec), std::invalid_argument);
}

TEST(ConstructTransition, FailureCarriesBestReport) {
  // lambda2 = 0 with a tiny entropy target cannot be met: A = 1 mu forces H(A) = H(mu)
  SynthesisSpec spec;
  spec.num_states = 3;
  spec.num_obs = 3;
  spec.target_lambda2 = 0.0;
  spec.target_transition_entropy = 0.05;
  SynthesisOptions opt;
  opt.adam_iterations = 200;
  opt.max_retries = 2;
  try {
    construct_transition(spec, opt);
    FAIL() << "expected SynthesisFailed";
  } catch (const SynthesisFailed& e) {
    EXPECT_FALSE(e.best_report().accepted);
    EXPECT_EQ(e.best_report().attempts, 2);
  }
}

// Every accepted matrix re-verified with independent analysis code.
TEST(ConstructTransition, AcceptedMatricesReverify) {
  int accepted = 0;
  int total = 0;
  for (int m : {2, 4, 8}) {
    for (double l2 : {0.5, 0.75, 0.95, 0.99}) {
      SynthesisSpec spec;
      spec.num_states = m;
      spec.num_obs = m;
      spec.target_lambda2 = l2;
      spec.stationary = (m == 4) ? StationaryMode::beta_skew(2.0) : StationaryMode::uniform();
      spec.seed = std::uint64_t(100 * m + int(l2 * 100));
      ++total;
      try {
        const TransitionResult r = construct_transition(spec);
        ++accepted;
        const Eigen::VectorXd mu = construct_stationary(m, spec.stationary);
        EXPECT_GE(r.transition.minCoeff(), 0.0);
        EXPECT_LE((r.transition.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-9);
        EXPECT_LE((mu.transpose() * r.transition - mu.transpose()).cwiseAbs().maxCoeff(), 1e-4);
        Eigen::ComplexEigenSolver<Eigen::MatrixXd> es(r.transition);
        std::vector<double> mod;
        for (Eigen::Index i = 0; i < m; ++i) mod.push_back(std::abs(es.eigenvalues()(i)));
        std::sort(mod.rbegin(), mod.rend());
        EXPECT_NEAR(mod[1], l2, 1e-3) << "M=" << m << " lambda2=" << l2;
      } catch (const SynthesisFailed&) {
      }
    }
  }
  EXPECT_GE(2 * accepted, total);
}

TEST(ConstructEmission, ZeroEntropyIsOneHot) {
  const EmissionResult e = construct_emission(3, 5, Eigen::VectorXd::Constant(3, 1.0 / 3), 0.0, 7);
  EXPECT_EQ(e.temperature, 0.0);
  std::set<int> argmaxes;
  for (int i = 0; i < 3; ++i) {
    Eigen::Index j;
    EXPECT_EQ(e.emission.row(i).maxCoeff(&j), 1.0);
    EXPECT_EQ(e.emission.row(i).sum(), 1.0);
    argmaxes.insert(int(j));
  }
  EXPECT_EQ(argmaxes.size(), 3u);  // distinct when L >= M
}

TEST(ConstructEmission, MaxEntropyIsUniform) {
  const EmissionResult e = construct_emission(3, 4, Eigen::VectorXd::Constant(3, 1.0 / 3), std::log(4.0), 7);
  EXPECT_LE((e.emission.array() - 0.25).abs().maxCoeff(), 1e-6);
}

TEST(ConstructEmission, HitsTargetWithinTolerance) {
  const Eigen::Vector2d mu(0.5, 0.5);
  const EmissionResult e = construct_emission(2, 4, mu, 1.0, 3);
  HmmParams p;
  p.transition = Eigen::Matrix2d::Constant(0.5);
  p.emission = e.emission;
  p.initial = mu;
  const double h = entropies(p, mu).emission;
  EXPECT_GE(h, 0.999);
  EXPECT_LE(h, 1.001);
}

TEST(ConstructEmission, Unreachable) {
  EXPECT_THROW(construct_emission(2, 3, Eigen::Vector2d(0.5, 0.5), std::log(3.0) + 0.01, 1), EntropyUnreachable);
}

TEST(ConstructEmission, TemperatureMonotoneInTarget) {
  const Eigen::VectorXd mu = Eigen::VectorXd::Constant(4, 0.25);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    double prev = 0.0;
    for (double target = 0.1; target < std::log(6.0) - 0.05; target += 0.2) {
      const EmissionResult e = construct_emission(4, 6, mu, target, seed);
      EXPECT_GE(e.temperature, prev);
      prev = e.temperature;
    }
  }
}

TEST(BuildSetting, PaperGridPoint) {
  SynthesisSpec spec;
  spec.num_states = 8;
  spec.num_obs = 8;
  spec.target_lambda2 = 0.75;
  spec.target_transition_entropy = 1.5;
  spec.target_emission_entropy = 1.0;
  spec.seed = 2024;
  const Setting s = build_setting(spec);
  EXPECT_TRUE(s.report.accepted);
  EXPECT_TRUE(validate(s.params).empty());
  EXPECT_NEAR(s.analysis.mixing_rate, 0.75, 1e-3);
  EXPECT_NEAR(s.analysis.entropy.transition, 1.5, 0.05);
  EXPECT_NEAR(s.analysis.entropy.emission, 1.0, 1e-3);
  EXPECT_TRUE(s.params.initial.isApprox(Eigen::VectorXd::Constant(8, 0.125)));
}

TEST(BuildSetting, SingleStateWarns) {
  SynthesisSpec spec;
  spec.num_states = 1;
  spec.num_obs = 3;
  spec.target_lambda2 = 0.6;
  spec.target_emission_entropy = 0.5;
  const Setting s = build_setting(spec);
  EXPECT_EQ(s.params.transition(0, 0), 1.0);
  EXPECT_FALSE(s.report.warnings.empty());
  EXPECT_TRUE(validate(s.params).empty());
}

TEST(BuildSetting, DeterministicInitAndBitwiseRepeat) {
  SynthesisSpec spec;
  spec.num_states = 4;
  spec.num_obs = 6;
  spec.target_lambda2 = 0.95;
  spec.target_emission_entropy = 0.7;
  spec.init = InitMode::Deterministic;
  spec.seed = 99;
  const Setting a = build_setting(spec);
  const Setting b = build_setting(spec);
  EXPECT_EQ(a.params.initial(0), 1.0);
  EXPECT_EQ(a.params.initial.sum(), 1.0);
  EXPECT_TRUE(a.params.transition == b.params.transition);
  EXPECT_TRUE(a.params.emission == b.params.emission);
}
