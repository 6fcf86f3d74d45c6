#pragma once

#include "hmmlab/errors.hpp"
#include "hmmlab/hmm.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace hmmlab {

enum PredictionFlag : std::uint32_t {
  kClampFired = 1u << 0,       // spectral scores were clamped at the floor
  kFallbackUniform = 1u << 1,  // predictor could not produce a model-based answer
  kNumericalBlowup = 1u << 2,  // spectral belief normalizer collapsed
  kRankDeficient = 1u << 3,    // spectral fit was rank deficient
  kDroppedMass = 1u << 4,      // ICL tokens outside the codec image were dropped
};

// Distribution over the next observation. argmax_symbol breaks ties toward the
// lowest index.
struct PredictiveDistribution {
  Eigen::VectorXd probs;
  Symbol argmax_symbol = 0;
  std::uint32_t flags = 0;

  // Normalizes nonnegative scores. Throws std::invalid_argument on negative or
  // all-zero input.
  static PredictiveDistribution from_scores(Eigen::VectorXd scores, std::uint32_t flags = 0);
  static PredictiveDistribution uniform(int num_obs, std::uint32_t flags = 0);
};

Symbol argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& v);

// Most likely hidden path by log-space Viterbi from pi, lowest index on ties.
std::vector<Symbol> viterbi_path(const HmmParams& params, SymbolView observations);

// Next-observation law sum_s A[x_T, s] B[s, .] from the Viterbi final state.
PredictiveDistribution viterbi_predict(const HmmParams& params, SymbolView observations);

inline constexpr std::size_t kFullHistory = std::numeric_limits<std::size_t>::max();

// Exact Bayesian prediction from the last window + 1 observations with the
// stationary law as the prior at the start of the window.
PredictiveDistribution truncated_forward_predict(const HmmParams& params, SymbolView observations,
                                                 std::size_t window);
PredictiveDistribution truncated_forward_predict(const HmmParams& params, const Eigen::VectorXd& stationary,
                                                 SymbolView observations, std::size_t window);

// ---------------------------------------------------------------------------
// Baum-Welch

struct BaumWelchOptions {
  int max_iters = 500;
  double tol = 1e-6;  // per-symbol log-likelihood improvement
  std::uint64_t init_seed = 0;
};

struct BaumWelchFit {
  HmmParams params;
  std::vector<double> log_likelihoods;  // one per E-step, in order
  int iterations = 0;                   // completed M-steps
  bool converged = false;
  int monotonicity_violations = 0;
  bool degenerate = false;
  std::vector<std::string> warnings;
};

double log_likelihood(const HmmParams& params, SymbolView observations);

// Random stochastic A and B rows from seed, uniform pi.
HmmParams random_initial_params(int num_states, int num_obs, std::uint64_t seed);

// Scaled forward-backward EM. A per-iteration decrease of the log-likelihood
// beyond round-off is counted in monotonicity_violations.
BaumWelchFit baum_welch_fit(SymbolView observations, int num_states, int num_obs,
                            const BaumWelchOptions& options = {});
BaumWelchFit baum_welch_fit_from(SymbolView observations, HmmParams initial,
                                 const BaumWelchOptions& options = {});

// ---------------------------------------------------------------------------
// n-gram

// Additively smoothed n-gram over one history. V counts distinct symbols seen
// in the history; unseen symbols receive zero mass.
class NgramModel {
 public:
  NgramModel(SymbolView history, int order, double delta, int num_obs);

  int order() const { return order_; }
  int vocabulary() const { return int(seen_.size()); }
  bool has_context(const std::vector<Symbol>& context) const;
  double probability(const std::vector<Symbol>& context, Symbol next) const;
  // Distribution over [0, num_obs) for a context of length order - 1.
  Eigen::VectorXd distribution(const std::vector<Symbol>& context) const;
  // Uniform over symbols seen in the history (over all symbols if none).
  Eigen::VectorXd backoff() const;

 private:

  int order_;
  double delta_;
  int num_obs_;
  std::vector<Symbol> seen_;
  std::map<std::vector<Symbol>, double> context_counts_;
  std::map<std::vector<Symbol>, std::vector<double>> next_counts_;
};

PredictiveDistribution ngram_predict(SymbolView history, int order, double delta, int num_obs);

// ---------------------------------------------------------------------------
// Spectral learning

struct SpectralDiagnostics {
  double sigma_min = 0.0;  // sigma_M of the bigram moment matrix
  double min_belief_normalizer = std::numeric_limits<double>::infinity();
  int clamp_events = 0;
};

struct SpectralParams {
  Eigen::MatrixXd projection;           // U, L x M, orthonormal columns
  Eigen::VectorXd initial_belief;       // b_1
  Eigen::VectorXd normalizer;           // b_inf
  std::vector<Eigen::MatrixXd> operators;  // C_o, one M x M per symbol
  Eigen::VectorXd unigram;              // P_1
  Eigen::MatrixXd bigram;               // P_2[i, j] = P(o_k = i, o_{k-1} = j)
  int burn_in_used = 0;
  double clamp_floor = 1e-10;
  SpectralDiagnostics diagnostics;

  int num_states() const { return int(projection.cols()); }
  int num_obs() const { return int(projection.rows()); }
};

class RankDeficient : public Error {
 public:
  RankDeficient(const std::string& what, SpectralDiagnostics diag) : Error(what), diag_(diag) {}
  const SpectralDiagnostics& diagnostics() const { return diag_; }

 private:
  SpectralDiagnostics diag_;
};

// Burn-in used by the harness when the chain is not started from mu.
int default_spectral_burn_in(double lambda2);

// Moore-Penrose inverse with singular values below rcond * sigma_max dropped.
Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& m, double rcond = 1e-10);

SpectralParams spectral_fit(SymbolView observations, int num_states, int num_obs, int burn_in = 0,
                            double clamp_floor = 1e-10);

PredictiveDistribution spectral_predict(const SpectralParams& sp, SymbolView observations,
                                        SpectralDiagnostics* diagnostics = nullptr);

// ---------------------------------------------------------------------------
// LLM in-context prediction

class CompletionSource;
class TokenCodec;

struct IclDiagnostics {
  double dropped_mass = 0.0;
  std::string source;  // live, cache or fixture
};

PredictiveDistribution icl_predict(CompletionSource& client, const TokenCodec& codec, SymbolView observations,
                                   const std::string& prefix = "", IclDiagnostics* diagnostics = nullptr);

}  // namespace hmmlab
