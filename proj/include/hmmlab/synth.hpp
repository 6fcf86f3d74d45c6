#pragma once

#include "hmmlab/errors.hpp"
#include "hmmlab/hmm.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hmmlab {

struct StationaryMode {
  enum class Kind { Uniform, BetaSkew };
  Kind kind = Kind::Uniform;
  double beta = 1.0;  // used by BetaSkew, must be >= 1

  static StationaryMode uniform() { return {}; }
  static StationaryMode beta_skew(double beta) { return {Kind::BetaSkew, beta}; }
};

enum class InitMode { Uniform, Deterministic };

// One grid point of the synthetic benchmark.
struct SynthesisSpec {
  int num_states = 2;
  int num_obs = 2;
  double target_lambda2 = 0.5;
  StationaryMode stationary;
  std::optional<double> target_transition_entropy;  // nats; nullopt means free
  double target_emission_entropy = 0.0;             // nats
  InitMode init = InitMode::Uniform;
  std::uint64_t seed = 0;
};

struct SynthesisOptions {
  int adam_iterations = 5000;
  double learning_rate = 0.01;
  int max_retries = 20;
  double lambda2_tolerance = 1e-3;
  double stationary_tolerance = 1e-4;
  double row_sum_tolerance = 1e-6;
  double negativity_floor = -1e-8;
  double entropy_band = 0.05;  // nats
};

struct SynthesisReport {
  double achieved_lambda2 = 0.0;
  double achieved_transition_entropy = 0.0;
  double achieved_emission_entropy = 0.0;
  double max_row_sum_error = 0.0;
  double max_negativity = 0.0;
  double stationary_error = 0.0;
  int iterations_used = 0;
  int attempts = 0;
  std::uint64_t seed_used = 0;
  double emission_temperature = 0.0;
  bool accepted = false;
  std::vector<std::string> warnings;
};

class SynthesisFailed : public Error {
 public:
  SynthesisFailed(const std::string& what, SynthesisReport best)
      : Error(what), best_(std::move(best)) {}
  const SynthesisReport& best_report() const { return best_; }

 private:
  SynthesisReport best_;
};

// Throws std::invalid_argument describing the first broken invariant.
void check_spec(const SynthesisSpec& spec);

// Uniform, or the probability mass of Beta(1, beta) on the M equal-width
// bins of [0, 1]; decreasing in the state index for beta > 1.
Eigen::VectorXd construct_stationary(int num_states, const StationaryMode& mode);

// Penalty objective over the free spectral variables of A.
//
// A = V diag(1, lambda2, lambda_3..lambda_M) U with V = [1 | V2] and
// U = V^{-1}. V2 = (I - 1 mu) Z keeps mu V2 = 0, so the first row of U is mu
// and, for uniform mu, the remaining rows equal the pseudo-inverse of V2.
// Free variables are packed as theta = [vec(Z) (column-major), lambda_3..M].
//
// value = sum max(-a_ij, 0) + sum_i (sum_j a_ij - 1)^2 + ||VU - I||_F^2
//         + sum_{i>=3} max(|lambda_i| - lambda2, 0) [+ (H(A) - target)^2]
class TransitionObjective {
 public:
  TransitionObjective(Eigen::VectorXd stationary, double lambda2,
                      std::optional<double> target_entropy);

  int num_states() const { return static_cast<int>(mu_.size()); }
  int num_variables() const;
  const Eigen::VectorXd& stationary() const { return mu_; }

  double value(const Eigen::VectorXd& theta, Eigen::VectorXd* gradient = nullptr) const;
  Eigen::MatrixXd transition(const Eigen::VectorXd& theta) const;

 private:
  struct Parts;
  Parts forward(const Eigen::VectorXd& theta) const;

  Eigen::VectorXd mu_;
  double lambda2_;
  std::optional<double> target_entropy_;
};

struct TransitionResult {
  Eigen::MatrixXd transition;
  SynthesisReport report;
};

// Adam on TransitionObjective, then clamp-and-verify. Retries with seed + 1
// up to max_retries. Throws SynthesisFailed carrying the best report.
TransitionResult construct_transition(const SynthesisSpec& spec,
                                      const SynthesisOptions& options = {});

struct EmissionResult {
  Eigen::MatrixXd emission;
  double temperature = 0.0;  // 0 means one-hot, +inf means uniform
  double achieved_entropy = 0.0;
};

// Rows are softmax(z_j / tau) of seeded standard-normal logits with a shared
// temperature tau found by bisection so that H(B, mu) hits the target.
EmissionResult construct_emission(int num_states, int num_obs, const Eigen::VectorXd& stationary,
                                  double target_entropy, std::uint64_t seed);

struct Setting {
  HmmParams params;
  ChainAnalysis analysis;
  SynthesisReport report;
};

Setting build_setting(const SynthesisSpec& spec, const SynthesisOptions& options = {});

}  // namespace hmmlab
